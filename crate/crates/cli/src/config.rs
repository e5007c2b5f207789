//! Layered run configuration: flags over file over defaults.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use beamsched::omc::OmcConfig;
use beamsched::service::VerifyConfig;
use beamsched::smc::SmcConfig;
use beamsched::treatment::{CompareConfig, SessionConfig};
use clap::Args;
use serde::{Deserialize, Serialize};

/// Fills unset fields of `self` from `under`.
pub trait Overlay {
    fn overlay(self, under: Self) -> Self;
}

macro_rules! overlay {
    ($t:ty { $($f:ident),* $(,)? }) => {
        impl Overlay for $t {
            fn overlay(self, under: Self) -> Self {
                Self { $($f: self.$f.or(under.$f)),* }
            }
        }
    };
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OmcOpts {
    /// Slot length in ms.
    #[arg(long)]
    pub slot_interval_ms: Option<f64>,
    /// How long a slot's models stay valid, in ms.
    #[arg(long)]
    pub validity_window_ms: Option<f64>,
    /// Trailing sample window used for fitting, in ms.
    #[arg(long)]
    pub fit_window_ms: Option<f64>,
    /// Validation probability below which an axis escalates.
    #[arg(long)]
    pub tp: Option<f64>,
    /// Accuracy given to fitted models (100 = deterministic).
    #[arg(long)]
    pub accuracy: Option<f64>,
}
overlay!(OmcOpts { slot_interval_ms, validity_window_ms, fit_window_ms, tp, accuracy });

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SmcOpts {
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
}
overlay!(SmcOpts { epsilon, delta });

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceOpts {
    /// Probability a beam needs to be cleared.
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// Look-ahead of each beam query in ms.
    #[arg(long)]
    pub scope_ms: Option<f64>,
    /// Per-slot verification budget in ms; 0 disables it.
    #[arg(long)]
    pub deadline_ms: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
}
overlay!(ServiceOpts { cutoff, scope_ms, deadline_ms, workers });

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SessionOpts {
    /// Robot travel time between beams in ms.
    #[arg(long)]
    pub transition_ms: Option<u64>,
    /// Trace time at which treatment starts; defaults to the first full slot.
    #[arg(long)]
    pub start_ms: Option<u64>,
    #[arg(long)]
    pub max_session_ms: Option<u64>,
}
overlay!(SessionOpts { transition_ms, start_ms, max_session_ms });

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CompareOpts {
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Beams drawn per repetition.
    #[arg(long)]
    pub beam_count: Option<usize>,
}
overlay!(CompareOpts { repetitions, beam_count });

/// Everything a run can be configured with. The same shape is read from
/// `--config` and written next to every output.
#[derive(Serialize, Deserialize, Debug, Clone, Default, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub trace: Option<PathBuf>,
    pub beams: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub addr: Option<String>,
    pub omc: OmcOpts,
    pub smc: SmcOpts,
    pub service: ServiceOpts,
    pub session: SessionOpts,
    pub compare: CompareOpts,
}

impl Overlay for RunConfig {
    fn overlay(self, under: Self) -> Self {
        Self {
            seed: self.seed.or(under.seed),
            trace: self.trace.or(under.trace),
            beams: self.beams.or(under.beams),
            model: self.model.or(under.model),
            out: self.out.or(under.out),
            addr: self.addr.or(under.addr),
            omc: self.omc.overlay(under.omc),
            smc: self.smc.overlay(under.smc),
            service: self.service.overlay(under.service),
            session: self.session.overlay(under.session),
            compare: self.compare.overlay(under.compare),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = crate::read_file(path)?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Library defaults. `deadline_ms` is left to the caller because
    /// batch runs and the live service want different values.
    pub fn defaults() -> Self {
        let omc = OmcConfig::default();
        let smc = SmcConfig::default();
        let verify = VerifyConfig::default();
        let session = SessionConfig::default();
        let cmp = CompareConfig::default();
        Self {
            seed: Some(0),
            addr: Some("127.0.0.1:7878".into()),
            omc: OmcOpts {
                slot_interval_ms: Some(omc.slot_interval_ms),
                validity_window_ms: Some(omc.validity_window_ms),
                fit_window_ms: Some(omc.fit_window_ms),
                tp: Some(omc.tp),
                accuracy: Some(omc.accuracy[0]),
            },
            smc: SmcOpts {
                epsilon: Some(smc.epsilon),
                delta: Some(smc.delta),
            },
            service: ServiceOpts {
                cutoff: Some(verify.cutoff),
                scope_ms: Some(verify.scope_ms),
                deadline_ms: None,
                workers: Some(verify.workers),
            },
            session: SessionOpts {
                transition_ms: Some(cmp.transition_ms),
                start_ms: None,
                max_session_ms: Some(session.max_duration_ms),
            },
            compare: CompareOpts {
                repetitions: Some(cmp.repetitions),
                beam_count: Some(cmp.beams),
            },
            ..Self::default()
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn smc(&self) -> anyhow::Result<SmcConfig> {
        let d = SmcConfig::default();
        SmcConfig::new(self.smc.epsilon.unwrap_or(d.epsilon), self.smc.delta.unwrap_or(d.delta))
            .context("invalid epsilon/delta")
    }

    pub fn omc(&self) -> anyhow::Result<OmcConfig> {
        let d = OmcConfig::default();
        let o = &self.omc;
        let cfg = OmcConfig {
            slot_interval_ms: o.slot_interval_ms.unwrap_or(d.slot_interval_ms),
            validity_window_ms: o.validity_window_ms.unwrap_or(d.validity_window_ms),
            fit_window_ms: o.fit_window_ms.unwrap_or(d.fit_window_ms),
            tp: o.tp.unwrap_or(d.tp),
            accuracy: [o.accuracy.unwrap_or(d.accuracy[0]); 3],
            smc: self.smc()?,
            seed: self.seed(),
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn verify(&self) -> anyhow::Result<VerifyConfig> {
        let d = VerifyConfig::default();
        let s = &self.service;
        let cutoff = s.cutoff.unwrap_or(d.cutoff);
        if !(0.0..=1.0).contains(&cutoff) {
            bail!("cutoff must lie in [0, 1]");
        }
        Ok(VerifyConfig {
            cutoff,
            scope_ms: s.scope_ms.unwrap_or(d.scope_ms),
            deadline: s.deadline_ms.filter(|&ms| ms > 0).map(Duration::from_millis),
            workers: s.workers.unwrap_or(d.workers).max(1),
            smc: self.smc()?,
            seed: self.seed(),
        })
    }

    pub fn session(&self) -> anyhow::Result<SessionConfig> {
        let d = SessionConfig::default();
        let omc = self.omc()?;
        let first = omc.first_full_slot() as f64 * omc.slot_interval_ms;
        Ok(SessionConfig {
            start_ms: self.session.start_ms.unwrap_or(first.ceil() as u64),
            max_duration_ms: self.session.max_session_ms.unwrap_or(d.max_duration_ms),
            slot_interval_ms: omc.slot_interval_ms.round() as u64,
        })
    }

    pub fn write_to(&self, dir: &Path) -> anyhow::Result<()> {
        let text = toml::to_string_pretty(self)?;
        std::fs::write(dir.join("config.toml"), text).with_context(|| format!("writing config into {}", dir.display()))
    }
}
