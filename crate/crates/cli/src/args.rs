//! Minimal `--flag value` parser with a declared set of boolean switches.

use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Default)]
pub struct Flags {
    named: BTreeMap<String, String>,
    switches: BTreeSet<String>,
}

impl Flags {
    pub fn parse(args: &[String], bool_flags: &[&str]) -> Result<Flags, String> {
        let mut flags = Flags::default();
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let Some(name) = arg.strip_prefix("--") else {
                return Err(format!("unexpected argument {arg:?}"));
            };
            if let Some((key, value)) = name.split_once('=') {
                flags.named.insert(key.to_string(), value.to_string());
                i += 1;
                continue;
            }
            if bool_flags.contains(&name) {
                flags.switches.insert(name.to_string());
                i += 1;
                continue;
            }
            let Some(value) = args.get(i + 1) else {
                return Err(format!("flag --{name} is missing a value"));
            };
            flags.named.insert(name.to_string(), value.clone());
            i += 2;
        }
        Ok(flags)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.named.get(key).map(|s| s.as_str())
    }

    pub fn switch(&self, key: &str) -> bool {
        self.switches.contains(key)
    }

    pub fn require(&self, key: &str) -> Result<&str, String> {
        self.get(key)
            .ok_or_else(|| format!("missing required flag --{key}"))
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, String> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| format!("flag --{key} has invalid value {raw:?}")),
        }
    }

    /// Reject any flag not in the allow list.
    pub fn check_known(&self, known: &[&str]) -> Result<(), String> {
        for key in self.named.keys().chain(self.switches.iter()) {
            if !known.contains(&key.as_str()) {
                return Err(format!("unknown flag --{key}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_pairs_switches_and_equals() {
        let flags = Flags::parse(
            &argv(&["--seed", "7", "--normalize-weights", "--out=/tmp/x"]),
            &["normalize-weights"],
        )
        .unwrap();
        assert_eq!(flags.get("seed"), Some("7"));
        assert!(flags.switch("normalize-weights"));
        assert_eq!(flags.get("out"), Some("/tmp/x"));
    }

    #[test]
    fn missing_value_is_an_error() {
        assert!(Flags::parse(&argv(&["--seed"]), &[]).is_err());
    }

    #[test]
    fn unknown_flags_are_rejected() {
        let flags = Flags::parse(&argv(&["--bogus", "1"]), &[]).unwrap();
        assert!(flags.check_known(&["seed"]).is_err());
    }
}
