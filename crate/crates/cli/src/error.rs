use lyapunov_learning::Error;

#[derive(Debug)]
pub enum CliError {
    /// Every offending key or value, reported together.
    Config(Vec<String>),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    /// Single-line `error kind=<kind>: <message>` report for stderr.
    pub fn line(&self) -> String {
        let (kind, msg) = match self {
            CliError::Config(p) => ("config", p.join("; ")),
            CliError::Numerical(m) => ("numerical", m.clone()),
            CliError::Io(m) => ("io", m.clone()),
        };
        format!("error kind={kind}: {}", msg.replace('\n', " "))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::UnknownMap(_) | Error::Dimension { .. } => {
                CliError::Config(vec![e.to_string()])
            }
            Error::Io(_) | Error::Json(_) | Error::Snapshot(_) => CliError::Io(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
