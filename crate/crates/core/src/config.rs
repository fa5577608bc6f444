//! Run configuration: defaults, config files, and override resolution.
//!
//! Precedence, strongest first: command-line flags, config file entries, the
//! `FLUIDRPM_SEED` environment variable (seed only), built-in defaults.
//! Resolution is a pure function; the caller passes the environment seed in,
//! so nothing here reads process state.

use crate::error::{Error, Result};
use crate::optim::OptimConfig;

/// Fully resolved run parameters. The defaults reproduce the reference
/// experimental setup: 5-tile sequences, 4 options, 200 optimization steps,
/// σ = 0.2, RMSprop with lr 3e-4 (dissimilarity at 0.7 of that).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub t: usize,
    pub n: usize,
    pub steps: u32,
    pub seed: u64,
    pub optim: OptimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { t: 5, n: 4, steps: 200, seed: 0, optim: OptimConfig::default() }
    }
}

impl RunConfig {
    /// Manifest entries describing every resolved value.
    pub fn manifest_entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("t", self.t.to_string()),
            ("n", self.n.to_string()),
            ("steps", self.steps.to_string()),
            ("seed", self.seed.to_string()),
            ("sigma", format!("{}", self.optim.sigma)),
            ("lr_pred", format!("{}", self.optim.lr_pred)),
            ("lr_dis", format!("{}", self.optim.lr_dis)),
            ("lr_bound", format!("{}", self.optim.lr_bound)),
            ("rho", format!("{}", self.optim.rho)),
            ("eps", format!("{}", self.optim.eps)),
        ]
    }
}

/// A partial configuration: only the fields that were explicitly given.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub t: Option<usize>,
    pub n: Option<usize>,
    pub steps: Option<u32>,
    pub seed: Option<u64>,
    pub sigma: Option<f64>,
    pub lr_pred: Option<f64>,
    pub lr_dis: Option<f64>,
    pub lr_bound: Option<f64>,
    pub rho: Option<f64>,
    pub eps: Option<f64>,
}

impl ConfigOverrides {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let usage = |what: String| Error::Usage(what);
        macro_rules! parse {
            ($field:ident) => {{
                if self.$field.is_some() {
                    return Err(usage(format!("duplicate config key {key}")));
                }
                self.$field = Some(
                    value
                        .parse()
                        .map_err(|_| usage(format!("bad value for {key}: {value}")))?,
                );
            }};
        }
        match key {
            "t" => parse!(t),
            "n" => parse!(n),
            "steps" => parse!(steps),
            "seed" => parse!(seed),
            "sigma" => parse!(sigma),
            "lr_pred" => parse!(lr_pred),
            "lr_dis" => parse!(lr_dis),
            "lr_bound" => parse!(lr_bound),
            "rho" => parse!(rho),
            "eps" => parse!(eps),
            other => return Err(usage(format!("unknown config key {other}"))),
        }
        Ok(())
    }
}

/// Parses a flat `key=value` config file. `#` starts a comment; blank lines
/// are fine; unknown keys and duplicates are usage errors.
pub fn parse_config_file(text: &str) -> Result<ConfigOverrides> {
    let mut over = ConfigOverrides::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("config line {}: missing '='", lineno + 1)))?;
        over.set(k.trim(), v.trim())?;
    }
    Ok(over)
}

/// Merges defaults, env seed, file entries, and flags into a validated
/// [`RunConfig`]. When `lr_pred` is overridden without an explicit `lr_dis`,
/// the dissimilarity rate follows at exactly 0.7 of the new value.
pub fn resolve_config(
    file: &ConfigOverrides,
    env_seed: Option<u64>,
    flags: &ConfigOverrides,
) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(seed) = env_seed {
        config.seed = seed;
    }

    let pick = |flag: Option<f64>, file: Option<f64>, base: f64| flag.or(file).unwrap_or(base);

    config.t = flags.t.or(file.t).unwrap_or(config.t);
    config.n = flags.n.or(file.n).unwrap_or(config.n);
    config.steps = flags.steps.or(file.steps).unwrap_or(config.steps);
    config.seed = flags.seed.or(file.seed).unwrap_or(config.seed);
    config.optim.sigma = pick(flags.sigma, file.sigma, config.optim.sigma);
    config.optim.lr_pred = pick(flags.lr_pred, file.lr_pred, config.optim.lr_pred);
    config.optim.lr_dis = match flags.lr_dis.or(file.lr_dis) {
        Some(v) => v,
        None => 0.7 * config.optim.lr_pred,
    };
    config.optim.lr_bound = pick(flags.lr_bound, file.lr_bound, config.optim.lr_bound);
    config.optim.rho = pick(flags.rho, file.rho, config.optim.rho);
    config.optim.eps = pick(flags.eps, file.eps, config.optim.eps);

    validate(&config)?;
    Ok(config)
}

fn validate(config: &RunConfig) -> Result<()> {
    let usage = |what: &str| Err(Error::Usage(what.to_string()));
    if config.t < 2 {
        return usage("t must be at least 2 (a sequence needs a transition)");
    }
    if config.n < 2 {
        return usage("n must be at least 2");
    }
    if !(config.optim.sigma > 0.0) {
        return usage("sigma must be positive");
    }
    for (name, lr) in [
        ("lr_pred", config.optim.lr_pred),
        ("lr_dis", config.optim.lr_dis),
        ("lr_bound", config.optim.lr_bound),
    ] {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Usage(format!("{name} must be a finite non-negative number")));
        }
    }
    if !(config.optim.rho >= 0.0 && config.optim.rho < 1.0) {
        return usage("rho must lie in [0, 1)");
    }
    if !(config.optim.eps > 0.0) {
        return usage("eps must be positive");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_setup() {
        let c = resolve_config(&ConfigOverrides::default(), None, &ConfigOverrides::default())
            .unwrap();
        assert_eq!(c.t, 5);
        assert_eq!(c.n, 4);
        assert_eq!(c.steps, 200);
        assert_eq!(c.seed, 0);
        assert_eq!(c.optim.sigma, 0.2);
        assert_eq!(c.optim.lr_pred, 3e-4);
        assert_eq!(c.optim.lr_dis, 0.7 * 3e-4);
        assert_eq!(c.optim.lr_bound, 3e-4);
        assert_eq!(c.optim.rho, 0.9);
        assert_eq!(c.optim.eps, 1e-8);
    }

    #[test]
    fn precedence_is_flags_over_file_over_env() {
        let file = parse_config_file("seed=10\nt=3 # file says 3\n\n# comment line\nsteps=50\n")
            .unwrap();
        let mut flags = ConfigOverrides::default();
        flags.t = Some(7);

        let c = resolve_config(&file, Some(99), &flags).unwrap();
        assert_eq!(c.t, 7, "flag beats file");
        assert_eq!(c.seed, 10, "file beats env");
        assert_eq!(c.steps, 50);

        let env_only =
            resolve_config(&ConfigOverrides::default(), Some(99), &ConfigOverrides::default())
                .unwrap();
        assert_eq!(env_only.seed, 99, "env beats default");
    }

    #[test]
    fn lr_dis_follows_lr_pred_unless_pinned() {
        let file = parse_config_file("lr_pred=0.001").unwrap();
        let c = resolve_config(&file, None, &ConfigOverrides::default()).unwrap();
        assert_eq!(c.optim.lr_dis, 0.7 * 0.001);

        let file = parse_config_file("lr_pred=0.001\nlr_dis=0.0002").unwrap();
        let c = resolve_config(&file, None, &ConfigOverrides::default()).unwrap();
        assert_eq!(c.optim.lr_dis, 0.0002);
    }

    #[test]
    fn bad_inputs_are_usage_errors() {
        assert!(matches!(
            parse_config_file("volume=11"),
            Err(Error::Usage(msg)) if msg.contains("unknown config key volume")
        ));
        assert!(matches!(parse_config_file("t=2\nt=3"), Err(Error::Usage(_))));
        assert!(matches!(parse_config_file("t two"), Err(Error::Usage(_))));
        assert!(matches!(parse_config_file("t=two"), Err(Error::Usage(_))));

        let mut flags = ConfigOverrides::default();
        flags.t = Some(1);
        let err = resolve_config(&ConfigOverrides::default(), None, &flags).unwrap_err();
        assert!(matches!(err, Error::Usage(msg) if msg.contains("t must be at least 2")));

        for bad in ["sigma=0", "rho=1", "eps=0", "lr_pred=-1"] {
            let file = parse_config_file(bad).unwrap();
            assert!(
                resolve_config(&file, None, &ConfigOverrides::default()).is_err(),
                "{bad} should be rejected"
            );
        }
    }
}
