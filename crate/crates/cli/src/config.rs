//! Option resolution and run manifests.
//!
//! Every subcommand's options are one struct that is both a clap `Args` and
//! a serde type. Defaults come from clap alone; `--config` supplies a JSON
//! base; flags given on the command line override the base.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, FromArgMatches};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Numerical(String),
}

impl Failure {
    pub fn input(msg: impl Into<String>) -> Self {
        Failure::Input(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) | Failure::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<algshape::Error> for Failure {
    fn from(e: algshape::Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

pub type CmdResult<T> = Result<T, Failure>;

/// Values every flag takes when it is not given.
pub fn defaults<T: Args + FromArgMatches>() -> T {
    let cmd = T::augment_args(clap::Command::new("defaults")).no_binary_name(true);
    let m = cmd.get_matches_from(std::iter::empty::<String>());
    T::from_arg_matches(&m).expect("every flag has a default")
}

/// Options of one subcommand: the `--config` base, if any, overridden by
/// explicit flags. A manifest is accepted as a config.
pub fn resolve<T>(command: &str, matches: &ArgMatches) -> CmdResult<T>
where
    T: Args + FromArgMatches + Serialize + DeserializeOwned,
{
    let cli = T::from_arg_matches(matches).map_err(|e| Failure::input(e.to_string()))?;
    let Some(path) = matches.get_one::<PathBuf>("config") else {
        return Ok(cli);
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let mut base: Value = serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    if let Some(cmd) = base.get("command").and_then(Value::as_str) {
        if cmd != command {
            return Err(Failure::input(format!("{} is a manifest of '{cmd}', not '{command}'", path.display())));
        }
        base = base.get("config").cloned().unwrap_or(Value::Null);
    }
    let Value::Object(mut obj) = base else {
        return Err(Failure::input(format!("{}: config must be a JSON object", path.display())));
    };
    let Value::Object(flags) = serde_json::to_value(&cli)? else {
        unreachable!("options serialize to an object")
    };
    for id in matches.ids() {
        let id = id.as_str();
        if matches.value_source(id) == Some(ValueSource::CommandLine) {
            if let Some(v) = flags.get(id) {
                obj.insert(id.to_string(), v.clone());
            }
        }
    }
    serde_json::from_value(Value::Object(obj)).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

/// Output path or an input error naming the flag.
pub fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> CmdResult<&'a Path> {
    value.as_deref().ok_or_else(|| Failure::input(format!("--{flag} is required")))
}

/// `out.csv` becomes `out.manifest.json`.
pub fn manifest_next_to(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

/// Record of one run. `config` is the fully resolved option set and can be
/// passed back through `--config` to repeat the run.
#[derive(Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config: &'a C,
    pub constants: Constants,
    pub outputs: Vec<String>,
    pub summary: Value,
    pub elapsed_seconds: f64,
}

/// Fixed numerical settings that outputs depend on.
#[derive(Serialize)]
pub struct Constants {
    pub eval_resolution: usize,
    pub default_subcells: usize,
}

pub fn write_manifest<C: Serialize>(path: &Path, command: &str, config: &C, outputs: &[&Path], summary: Value, started: Instant) -> CmdResult<()> {
    let m = Manifest {
        tool: "algshape",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
        constants: Constants {
            eval_resolution: algshape::metrics::EVAL_RESOLUTION,
            default_subcells: algshape::sampler::DEFAULT_SUBCELLS,
        },
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        summary,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };
    algshape::io::write_json(path, &m)?;
    Ok(())
}

/// Parses a value through its serde name, for enums defined in the library.
pub fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::{Arg, Command};

    #[derive(Args, Serialize, serde::Deserialize, Debug, PartialEq)]
    #[serde(default)]
    struct Opts {
        #[arg(long, default_value_t = 3)]
        a: u32,
        #[arg(long, default_value_t = 1.5)]
        b: f64,
    }

    impl Default for Opts {
        fn default() -> Self {
            defaults()
        }
    }

    fn matches(args: &[&str]) -> ArgMatches {
        let cmd = Opts::augment_args(Command::new("t")).arg(Arg::new("config").long("config").value_parser(clap::value_parser!(PathBuf)));
        cmd.get_matches_from(std::iter::once("t").chain(args.iter().copied()))
    }

    #[test]
    fn defaults_come_from_clap() {
        assert_eq!(Opts::default(), Opts { a: 3, b: 1.5 });
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::TempDir::new().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"a": 7}"#).unwrap();
        let c = cfg.to_str().unwrap();
        assert_eq!(resolve::<Opts>("t", &matches(&["--config", c])).unwrap(), Opts { a: 7, b: 1.5 });
        assert_eq!(resolve::<Opts>("t", &matches(&["--config", c, "--a", "9"])).unwrap(), Opts { a: 9, b: 1.5 });

        std::fs::write(&cfg, r#"{"command": "t", "config": {"b": 2.0}}"#).unwrap();
        assert_eq!(resolve::<Opts>("t", &matches(&["--config", c])).unwrap(), Opts { a: 3, b: 2.0 });
        assert!(resolve::<Opts>("u", &matches(&["--config", c])).is_err());
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        let numeric: Failure = algshape::Error::Numerical("diverged".into()).into();
        assert_eq!(numeric.exit_code(), 3);
        let input: Failure = algshape::Error::ZeroSignal.into();
        assert_eq!(input.exit_code(), 2);
    }
}
