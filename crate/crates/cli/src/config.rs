//! Flag tables, config-file merging and validation.
//!
//! Every command is described by a settings struct whose serialized default
//! doubles as the flag list: one `--kebab-case` flag per key, with the
//! default shown in `--help`. Resolution order is defaults, then the JSON
//! config file, then flags given on the command line.

use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{Arg, ArgMatches, Command};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

const HELP: &[(&str, &str)] = &[
    ("out", "Output directory"),
    ("seed", "Master seed for the data, init and dropout streams"),
    ("threads", "Worker threads for independent runs (0 = all cores)"),
    ("sigma_a", "Lorenz sigma before the shift"),
    ("rho_a", "Lorenz rho before the shift"),
    ("beta_a", "Lorenz beta before the shift"),
    ("sigma_b", "Lorenz sigma after the shift"),
    ("rho_b", "Lorenz rho after the shift"),
    ("beta_b", "Lorenz beta after the shift"),
    ("n", "States kept per regime"),
    ("dt", "Integration step"),
    ("transient", "Steps discarded before recording"),
    ("scale", "Divisor applied to raw states"),
    ("x0", "Initial state before jitter"),
    ("data", "Trajectory CSV to train on instead of generating one"),
    ("regularizer", "none | lyapunov | l1 | l2 | dropout"),
    ("alpha", "Regularizer weight"),
    ("dropout_p", "Hidden-unit drop probability"),
    ("lyap_horizon", "Self-generated steps for the training-time exponent"),
    ("learning_rate", "Optimizer step size"),
    ("optimizer", "adam | sgd"),
    ("layer_sizes", "Comma-separated layer widths, input to output"),
    ("seeds", "Number of matched seeds"),
    ("l1", "L1 weight of the baseline row"),
    ("l2", "L2 weight of the baseline row"),
    ("dropout", "Drop probability of the baseline row"),
    ("alphas", "Comma-separated regularizer weights"),
    ("target", "Target largest exponent"),
    ("hinge_weight", "Weight of the dissipativity hinge"),
    ("margin", "Margin of the dissipativity hinge"),
    ("init_gain", "Multiplier on the initial weights"),
    ("train_horizon", "Steps per training-time spectrum"),
    ("advance", "Free-running steps between updates"),
    ("detach_states", "Treat visited states as constants"),
    ("max_steps", "Update budget per restart"),
    ("max_restarts", "Restarts with seed + k"),
    ("eval_every", "Updates between spectrum evaluations"),
    ("eval_horizon", "Steps per evaluation spectrum"),
    ("tolerance", "Accepted distance from the target"),
    ("bound", "Bound on every coordinate of the final orbit"),
    ("check_steps", "Length of the final orbit and spectrum"),
    ("map", "Oracle map: linear | logistic | lorenz"),
    ("network", "Network snapshot to analyse instead of an oracle map"),
    ("r", "Logistic map parameter"),
    ("steps", "Spectrum horizon"),
];

fn help_for(key: &str) -> &'static str {
    HELP.iter().find(|(k, _)| *k == key).map(|(_, h)| *h).unwrap_or("")
}

pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn render_default(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        Value::Array(items) => Some(
            items
                .iter()
                .filter_map(render_default)
                .collect::<Vec<_>>()
                .join(","),
        ),
        other => Some(other.to_string()),
    }
}

fn defaults_of<T: Serialize>(value: &T) -> Map<String, Value> {
    match serde_json::to_value(value) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("settings serialize to objects"),
    }
}

/// Builds the clap subcommand for settings type `T`.
pub fn subcommand<T: Serialize>(name: &'static str, about: &'static str, defaults: &T) -> Command {
    let mut cmd = Command::new(name).about(about).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("JSON config file, or a manifest to replay"),
    );
    for (key, value) in defaults_of(defaults) {
        let mut arg = Arg::new(key.clone())
            .long(flag_name(&key))
            .value_name(key.to_uppercase())
            .help(help_for(&key));
        if let Some(d) = render_default(&value) {
            arg = arg.default_value(d);
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

/// Converts a flag string into JSON shaped like `default`.
fn parse_flag(raw: &str, default: &Value) -> Result<Value, String> {
    match default {
        Value::Bool(_) => raw
            .parse::<bool>()
            .map(Value::Bool)
            .map_err(|_| format!("expected true or false, got `{raw}`")),
        Value::Number(_) => parse_number(raw),
        Value::Array(items) => {
            if raw.trim().is_empty() {
                return Ok(Value::Array(vec![]));
            }
            let elem = items.first().cloned().unwrap_or(Value::from(0.0));
            raw.split(',')
                .map(|part| parse_flag(part.trim(), &elem))
                .collect::<Result<Vec<_>, _>>()
                .map(Value::Array)
        }
        _ => Ok(Value::String(raw.to_string())),
    }
}

fn parse_number(raw: &str) -> Result<Value, String> {
    if let Ok(u) = raw.parse::<u64>() {
        return Ok(Value::from(u));
    }
    if let Ok(i) = raw.parse::<i64>() {
        return Ok(Value::from(i));
    }
    match raw.parse::<f64>() {
        Ok(f) if f.is_finite() => Ok(Value::from(f)),
        _ => Err(format!("expected a number, got `{raw}`")),
    }
}

/// Reads a config file. A manifest written by this tool is accepted and its
/// `resolved_config` is used.
fn read_config_file(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(vec![format!("config {}: {e}", path.display())]))?;
    let obj = match value {
        Value::Object(mut m) => match m.remove("resolved_config") {
            Some(Value::Object(inner)) if m.contains_key("command") => inner,
            Some(other) => {
                m.insert("resolved_config".into(), other);
                m
            }
            None => m,
        },
        _ => {
            return Err(CliError::Config(vec![format!(
                "config {}: expected a JSON object",
                path.display()
            )]))
        }
    };
    Ok(obj)
}

pub struct Resolved<T> {
    pub settings: T,
    pub dump: Value,
    pub config_path: Option<PathBuf>,
}

/// Merges defaults, config file and command-line flags, then checks every
/// key's type. All problems are reported together.
pub fn resolve<T>(
    matches: &ArgMatches,
    defaults: &T,
    check: impl Fn(&T) -> Vec<String>,
) -> Result<Resolved<T>, CliError>
where
    T: Serialize + DeserializeOwned,
{
    let base = defaults_of(defaults);
    let mut merged = base.clone();
    let mut problems = Vec::new();

    let config_path = matches.get_one::<String>("config").map(PathBuf::from);
    if let Some(path) = &config_path {
        for (key, value) in read_config_file(path)? {
            let key = key.replace('-', "_");
            if base.contains_key(&key) {
                merged.insert(key, value);
            } else {
                problems.push(format!("{key}: unknown key"));
            }
        }
    }

    for (key, default) in &base {
        if matches.value_source(key) != Some(ValueSource::CommandLine) {
            continue;
        }
        let raw = matches.get_one::<String>(key).expect("flag has a value");
        match parse_flag(raw, default) {
            Ok(v) => {
                merged.insert(key.clone(), v);
            }
            Err(e) => problems.push(format!("{}: {e}", flag_name(key))),
        }
    }

    // keys with a bad type fall back to their default so the range checks
    // below still see every other key
    let mut repaired = merged.clone();
    for (key, value) in &merged {
        let mut probe = base.clone();
        probe.insert(key.clone(), value.clone());
        if let Err(e) = serde_json::from_value::<T>(Value::Object(probe)) {
            problems.push(format!("{key}: {e}"));
            repaired.insert(key.clone(), base[key].clone());
        }
    }
    let settings: T = serde_json::from_value(Value::Object(repaired))
        .map_err(|e| CliError::Config(vec![e.to_string()]))?;
    problems.extend(check(&settings));
    if !problems.is_empty() {
        problems.sort();
        problems.dedup();
        return Err(CliError::Config(problems));
    }

    let dump = Value::Object(merged);
    Ok(Resolved {
        settings,
        dump,
        config_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_follow_the_default_shape() {
        assert_eq!(parse_flag("3", &Value::from(0u64)).unwrap(), Value::from(3u64));
        assert_eq!(parse_flag("1e-3", &Value::from(0.5)).unwrap(), Value::from(0.001));
        assert_eq!(
            parse_flag("3,10,3", &serde_json::json!([3, 50, 3])).unwrap(),
            serde_json::json!([3, 10, 3])
        );
        assert!(parse_flag("abc", &Value::from(1.0)).is_err());
        assert_eq!(parse_flag("false", &Value::Bool(true)).unwrap(), Value::Bool(false));
        assert_eq!(parse_flag("l2", &Value::from("none")).unwrap(), Value::from("l2"));
    }

    #[test]
    fn defaults_render_for_help() {
        assert_eq!(render_default(&serde_json::json!([0.01, 1.0])).unwrap(), "0.01,1.0");
        assert_eq!(render_default(&Value::Null), None);
    }
}
