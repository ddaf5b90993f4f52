//! CSV summaries of a trace and the decay report.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use super::{base_period_min, expected_decay_period, staleness_series, time_averaged_mae, ScenarioConfig, SimError, SimTrace};
use crate::lifecycle::{ModelType, SourceTier};
use crate::stats::{interval_stats, IntervalStats, StatsError};

/// Which tiers' publishes to include.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TierFilter {
    Dedicated,
    Opportunistic,
    All,
}

impl TierFilter {
    pub const ALL: [TierFilter; 3] = [TierFilter::Dedicated, TierFilter::Opportunistic, TierFilter::All];

    pub fn as_str(self) -> &'static str {
        match self {
            TierFilter::Dedicated => "ded",
            TierFilter::Opportunistic => "opp",
            TierFilter::All => "all",
        }
    }

    pub fn admits(self, tier: SourceTier) -> bool {
        match self {
            TierFilter::Dedicated => tier == SourceTier::Dedicated,
            TierFilter::Opportunistic => tier == SourceTier::Opportunistic,
            TierFilter::All => true,
        }
    }
}

impl FromStr for TierFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TierFilter::ALL.into_iter().find(|f| f.as_str() == s).ok_or_else(|| format!("unknown tier set {s:?} (expected ded, opp or all)"))
    }
}

impl SimTrace {
    /// Gaps between consecutive publishes of `model` from the selected tiers.
    pub fn interval_stats(&self, model: ModelType, tiers: TierFilter) -> Result<IntervalStats<f64>, StatsError> {
        let times: Vec<_> = self.publishes().filter(|p| p.model == model && tiers.admits(p.tier)).map(|p| p.time).collect();
        interval_stats(format!("{model}/{}", tiers.as_str()), &times)
    }
}

/// Writes `trace.ndjson` plus the CSV summaries into `dir`.
pub fn write_outputs(trace: &SimTrace, dir: &Path) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    trace.write_ndjson(BufWriter::new(File::create(dir.join("trace.ndjson"))?))?;

    let mut w = BufWriter::new(File::create(dir.join("publishes.csv"))?);
    writeln!(w, "time_ms,model_type,tier,cutoff_ms,instance_id,allocation_id,version")?;
    for p in trace.publishes() {
        let alloc = p.allocation.map(|a| a.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{},{alloc},{}", p.time.0, p.model, p.tier, p.cutoff.0, p.instance, p.version)?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(dir.join("intervals.csv"))?);
    writeln!(w, "model_type,tiers,count,min_min,avg_min,max_min,std_min")?;
    for m in ModelType::ALL {
        for f in TierFilter::ALL {
            if let Ok(s) = trace.interval_stats(m, f) {
                writeln!(w, "{m},{},{},{},{},{},{}", f.as_str(), s.count, s.min, s.avg, s.max, s.std)?;
            }
        }
    }
    w.flush()?;

    for m in ModelType::ALL {
        let mut w = BufWriter::new(File::create(dir.join(format!("staleness_{m}.csv")))?);
        writeln!(w, "time_ms,age_min")?;
        if let Ok(series) = staleness_series(trace, m) {
            for (t, age) in series.points() {
                writeln!(w, "{},{age}", t.0)?;
            }
        }
        w.flush()?;

        let mut w = BufWriter::new(File::create(dir.join(format!("deploy_history_{m}.csv")))?);
        writeln!(w, "time_ms,version,cutoff_ms,source_tier")?;
        for r in &trace.records {
            if let super::TraceRecord::Deploy {
                time,
                model,
                version,
                cutoff,
                source_tier,
                decision: crate::lifecycle::DeployDecision::Deployed,
            } = r
            {
                if *model == m {
                    writeln!(w, "{},{version},{},{source_tier}", time.0, cutoff.0)?;
                }
            }
        }
        w.flush()?;
    }
    Ok(())
}

/// CSV of expected period and time-averaged MAE for 0..=20 extra
/// generations per base period. The final line carries the error floor.
pub fn write_decay_report<W: Write>(config: &ScenarioConfig, mut w: W) -> Result<(), DecayReportError> {
    config.validate()?;
    let base = base_period_min(config);
    let sensor = config.sensor_interval_min;
    let curves: Vec<_> = config.decay_curves.iter().collect();
    write!(w, "extra_generations,expected_period_min,effective_period_min")?;
    for (m, _) in &curves {
        write!(w, ",mae_{m}")?;
    }
    writeln!(w)?;
    for k in 0..=20u32 {
        let period = expected_decay_period(base, k);
        // Generating faster than data arrives buys nothing.
        let effective = period.max(sensor);
        write!(w, "{k},{period},{effective}")?;
        for (_, c) in &curves {
            write!(w, ",{}", time_averaged_mae(c, 0.0, effective)?)?;
        }
        writeln!(w)?;
    }
    let floor = config.measurement_error_band.0;
    write!(w, "floor,{sensor},{sensor}")?;
    for _ in &curves {
        write!(w, ",{floor}")?;
    }
    writeln!(w)?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum DecayReportError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] io::Error),
}
