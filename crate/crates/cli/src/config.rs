//! Config files, config echo and run manifests.

use anyhow::{bail, Context, Result};
use clap::{ArgMatches, Command};
use octcyst::nn::parse_metadata;
use sha2::{Digest, Sha256};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Finds the value of `--config` anywhere on the command line.
fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// Splices the entries of the `--config` file into `argv` as `--key=value`
/// flags placed right after the subcommand name, so explicit flags given later
/// take precedence. Keys the subcommand does not know are skipped; keys no
/// subcommand knows are an error.
pub fn inject_config(cmd: &Command, argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    let entries = parse_metadata(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let known = |sub: &Command, key: &str| sub.get_arguments().any(|a| a.get_long() == Some(key) && key != "config");
    for key in entries.keys() {
        if !cmd.get_subcommands().any(|s| known(s, key)) && !cmd.get_arguments().any(|a| a.get_long() == Some(key)) {
            bail!("{}: unknown key {key:?}", path.display());
        }
    }
    let Some((at, sub)) = argv
        .iter()
        .enumerate()
        .skip(1)
        .find_map(|(i, a)| cmd.find_subcommand(a.to_string_lossy().as_ref()).map(|s| (i, s)))
    else {
        return Ok(argv);
    };
    let mut out: Vec<OsString> = argv[..=at].to_vec();
    for (k, v) in &entries {
        if known(sub, k) {
            out.push(format!("--{k}={v}").into());
        }
    }
    out.extend_from_slice(&argv[at + 1..]);
    Ok(out)
}

/// Every resolved argument of the subcommand as `key=value`, in declaration order.
pub fn config_echo(sub: &Command, m: &ArgMatches) -> Vec<(String, String)> {
    sub.get_arguments()
        .filter_map(|a| {
            let id = a.get_id().as_str();
            let vals = m.try_get_raw(id).ok().flatten()?;
            let joined: Vec<String> = vals.map(|v| v.to_string_lossy().into_owned()).collect();
            Some((a.get_long().unwrap_or(id).to_string(), joined.join(",")))
        })
        .collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Default)]
pub struct Manifest {
    pub command: String,
    pub config: Vec<(String, String)>,
    pub seed: Option<u64>,
    pub inputs: Vec<(PathBuf, String)>,
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(command: &str, config: Vec<(String, String)>) -> Self {
        Self {
            command: command.to_string(),
            config,
            ..Self::default()
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let h = sha256_file(path)?;
        self.inputs.push((path.to_path_buf(), h));
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn render(&self) -> String {
        let mut s = String::from("# octcyst run manifest\n");
        let _ = writeln!(s, "command={}", self.command);
        let _ = writeln!(s, "version={}", env!("CARGO_PKG_VERSION"));
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k}={v}");
        }
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed={seed}");
        }
        for (p, h) in &self.inputs {
            let _ = writeln!(s, "input.sha256.{}={h}", p.display());
        }
        for p in &self.outputs {
            let _ = writeln!(s, "output={}", p.display());
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).with_context(|| format!("writing manifest {}", path.display()))
    }
}

/// `<file>.manifest` beside a file output.
pub fn manifest_beside(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Arg;

    fn cmd() -> Command {
        Command::new("t")
            .arg(Arg::new("config").long("config").global(true))
            .subcommand(Command::new("a").arg(Arg::new("lr").long("lr")).arg(Arg::new("k").long("k")))
            .subcommand(Command::new("b").arg(Arg::new("threshold").long("threshold")))
    }

    #[test]
    fn config_entries_follow_the_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        std::fs::write(&p, "# comment\nlr = 0.5\n\nthreshold=0.2\n").unwrap();
        let argv: Vec<OsString> = ["t", "--config", p.to_str().unwrap(), "a", "--k", "3"]
            .iter()
            .map(OsString::from)
            .collect();
        let out = inject_config(&cmd(), argv).unwrap();
        let s: Vec<String> = out.iter().map(|a| a.to_string_lossy().into_owned()).collect();
        assert_eq!(s[3..], ["a", "--lr=0.5", "--k", "3"]);
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        std::fs::write(&p, "nonsense=1\n").unwrap();
        let argv = vec!["t".into(), format!("--config={}", p.display()).into(), "b".into()];
        assert!(inject_config(&cmd(), argv).is_err());
    }

    #[test]
    fn manifest_lists_config_and_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("in.bin");
        std::fs::write(&p, b"abc").unwrap();
        let mut m = Manifest::new("gmp", vec![("directions".into(), "8".into())]);
        m.seed = Some(3);
        m.input(&p).unwrap();
        let text = m.render();
        assert!(text.contains("config.directions=8\n"));
        assert!(text.contains("seed=3\n"));
        assert!(text.contains("ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"));
        assert_eq!(manifest_beside(Path::new("x/out.ovf")), Path::new("x/out.ovf.manifest"));
    }
}
