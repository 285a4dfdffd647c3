//! Closed-form recovery-time and cost model.
//!
//! All inputs are raw bytes, bytes per second and counts. Nothing is rounded
//! here; rounding belongs to presentation.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("{field} must be a finite number > 0, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("{field} must be a finite number >= 0, got {value}")]
    Negative { field: &'static str, value: f64 },
    #[error("delta ({delta}) exceeds total data ({data})")]
    DeltaExceedsData { delta: f64, data: f64 },
    #[error("sweep value list is empty")]
    EmptySweep,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtoParams {
    /// D: bytes held by the recovering node.
    pub data_bytes: f64,
    /// δ: bytes that differ between the replicas.
    pub delta_bytes: f64,
    /// H: hash throughput per core.
    pub hash_throughput: f64,
    /// C: cores available for hashing.
    pub cores: f64,
    /// B: link bandwidth.
    pub bandwidth: f64,
    /// S: bytes per index entry.
    pub entry_bytes: f64,
    /// N: blocks in the index.
    pub blocks: f64,
}

impl RtoParams {
    /// 100 TB node, 1 TB delta, 16 cores, 10 GbE.
    pub const REFERENCE: RtoParams = RtoParams {
        data_bytes: 1.1e14,
        delta_bytes: 1.0e12,
        hash_throughput: 5.0e8,
        cores: 16.0,
        bandwidth: 1.25e9,
        entry_bytes: 32.0,
        blocks: 1.0e9,
    };

    /// D, H, C, B and S must be positive; δ and N may be zero.
    pub fn validate(&self) -> Result<(), DomainError> {
        for (field, value) in [
            ("data_bytes", self.data_bytes),
            ("hash_throughput", self.hash_throughput),
            ("cores", self.cores),
            ("bandwidth", self.bandwidth),
            ("entry_bytes", self.entry_bytes),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(DomainError::NonPositive { field, value });
            }
        }
        for (field, value) in [("delta_bytes", self.delta_bytes), ("blocks", self.blocks)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(DomainError::Negative { field, value });
            }
        }
        if self.delta_bytes > self.data_bytes {
            return Err(DomainError::DeltaExceedsData { delta: self.delta_bytes, data: self.data_bytes });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtoBreakdown {
    pub t_hash: f64,
    pub t_index: f64,
    pub t_delta: f64,
    pub rto_hash: f64,
    pub rto_meta: f64,
    /// rto_hash / rto_meta; `f64::INFINITY` when rto_meta is zero.
    pub improvement_factor: f64,
}

pub fn rto_breakdown(p: &RtoParams) -> Result<RtoBreakdown, DomainError> {
    p.validate()?;
    let t_hash = p.data_bytes / (p.hash_throughput * p.cores);
    let t_index = p.blocks * p.entry_bytes / p.bandwidth;
    let t_delta = p.delta_bytes / p.bandwidth;
    let rto_meta = t_index + t_delta;
    let rto_hash = t_hash + t_index + t_delta;
    let improvement_factor = if rto_meta > 0.0 { rto_hash / rto_meta } else { f64::INFINITY };
    Ok(RtoBreakdown { t_hash, t_index, t_delta, rto_hash, rto_meta, improvement_factor })
}

/// A row of the scaling table as originally published.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublishedRow {
    pub label: &'static str,
    pub scale: f64,
    pub rto_hash_hours: f64,
    pub rto_meta_minutes: f64,
    pub factor: f64,
}

pub const PUBLISHED_TABLE: [PublishedRow; 4] = [
    PublishedRow { label: "10 TB", scale: 0.1, rto_hash_hours: 0.4, rto_meta_minutes: 0.23, factor: 1.8 },
    PublishedRow { label: "100 TB", scale: 1.0, rto_hash_hours: 4.05, rto_meta_minutes: 13.8, factor: 17.6 },
    PublishedRow { label: "500 TB", scale: 5.0, rto_hash_hours: 20.2, rto_meta_minutes: 13.9, factor: 87.0 },
    PublishedRow { label: "1 PB", scale: 10.0, rto_hash_hours: 40.4, rto_meta_minutes: 14.0, factor: 176.0 },
];

/// The published sensitivity point: 128 cores at 100 TB, about 2.7x.
pub const PUBLISHED_C128_FACTOR: f64 = 2.7;

/// Linear-scaling presentation: the hash RTO is the base row's hash RTO times
/// k and the meta RTO stays at the base row's value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledRow {
    pub rto_hash: f64,
    pub rto_meta: f64,
    pub improvement_factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table2Row {
    pub label: String,
    pub scale: f64,
    /// D and N multiplied by the scale, δ fixed.
    pub direct: RtoBreakdown,
    pub linear: ScaledRow,
    pub published: Option<PublishedRow>,
    pub annotations: Vec<String>,
}

fn label_for(p: &RtoParams, k: f64) -> String {
    let tb = p.data_bytes * k / 1.1e12;
    if tb >= 1000.0 {
        format!("{} PB", round_to(tb / 1000.0, 1))
    } else {
        format!("{} TB", round_to(tb, 1))
    }
}

/// Rounds half away from zero at `digits` decimals.
pub fn round_to(x: f64, digits: i32) -> f64 {
    let m = 10f64.powi(digits);
    (x * m).round() / m
}

fn scaled(base: &RtoParams, k: f64) -> RtoParams {
    RtoParams { data_bytes: base.data_bytes * k, blocks: base.blocks * k, ..*base }
}

/// Evaluates the scaling table. Published values are attached to any row
/// whose scale matches a published row, and every cell where the published
/// value departs from the direct formula gets an annotation.
pub fn table2(base: &RtoParams, scales: &[f64]) -> Result<Vec<Table2Row>, DomainError> {
    let b = rto_breakdown(base)?;
    let mut rows = Vec::with_capacity(scales.len());
    for &k in scales {
        let direct = rto_breakdown(&scaled(base, k))?;
        let linear = ScaledRow {
            rto_hash: b.rto_hash * k,
            rto_meta: b.rto_meta,
            improvement_factor: b.improvement_factor * k,
        };
        let published = (*base == RtoParams::REFERENCE)
            .then(|| PUBLISHED_TABLE.iter().find(|r| (r.scale - k).abs() < 1e-9).copied())
            .flatten();
        let mut annotations = Vec::new();
        if let Some(p) = published {
            annotate(&mut annotations, &direct, &linear, &p);
        }
        rows.push(Table2Row {
            label: published.map_or_else(|| label_for(base, k), |p| p.label.to_string()),
            scale: k,
            direct,
            linear,
            published,
            annotations,
        });
    }
    Ok(rows)
}

fn annotate(out: &mut Vec<String>, d: &RtoBreakdown, l: &ScaledRow, p: &PublishedRow) {
    let hash_digits = if round_to(p.rto_hash_hours, 1) == p.rto_hash_hours { 1 } else { 2 };
    let hours = round_to(d.rto_hash / 3600.0, hash_digits);
    if (hours - p.rto_hash_hours).abs() > 1e-9 {
        out.push(format!(
            "hash: direct {hours} hr vs published {} hr; linear scaling gives {} hr",
            p.rto_hash_hours,
            round_to(l.rto_hash / 3600.0, hash_digits)
        ));
    }
    let implied_meta = p.rto_hash_hours * 60.0 / p.factor;
    let minutes = round_to(d.rto_meta / 60.0, 1);
    if (p.rto_meta_minutes - implied_meta).abs() > 0.1 * implied_meta {
        out.push(format!(
            "meta: published {} min contradicts its own {}x factor, which implies {:.1} min; direct {minutes} min",
            p.rto_meta_minutes, p.factor, implied_meta
        ));
    } else if (minutes - p.rto_meta_minutes).abs() > 1e-9 {
        out.push(format!(
            "meta: direct {minutes} min vs published {} min; base-row value {} min",
            p.rto_meta_minutes,
            round_to(l.rto_meta / 60.0, 1)
        ));
    }
    let factor = round_to(d.improvement_factor, 1);
    if (factor - p.factor).abs() > 1e-9 {
        out.push(format!(
            "factor: direct {:.2}x vs published {}x; linear scaling gives {:.2}x",
            d.improvement_factor, p.factor, l.improvement_factor
        ));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepParam {
    Delta,
    Cores,
    Bandwidth,
    Data,
    HashThroughput,
    Blocks,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Delta => "delta",
            SweepParam::Cores => "C",
            SweepParam::Bandwidth => "B",
            SweepParam::Data => "D",
            SweepParam::HashThroughput => "H",
            SweepParam::Blocks => "N",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "delta" | "δ" => SweepParam::Delta,
            "C" | "cores" => SweepParam::Cores,
            "B" | "bandwidth" => SweepParam::Bandwidth,
            "D" | "data" => SweepParam::Data,
            "H" | "hash" => SweepParam::HashThroughput,
            "N" | "blocks" => SweepParam::Blocks,
            _ => return None,
        })
    }

    fn apply(self, base: &RtoParams, v: f64) -> RtoParams {
        let mut p = *base;
        match self {
            SweepParam::Delta => p.delta_bytes = v,
            SweepParam::Cores => p.cores = v,
            SweepParam::Bandwidth => p.bandwidth = v,
            SweepParam::Data => p.data_bytes = v,
            SweepParam::HashThroughput => p.hash_throughput = v,
            SweepParam::Blocks => p.blocks = v,
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub breakdown: RtoBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityCurve {
    pub param: SweepParam,
    pub points: Vec<SweepPoint>,
}

impl SensitivityCurve {
    pub fn factors(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.breakdown.improvement_factor).collect()
    }

    /// True when the factor strictly falls as the swept value rises.
    pub fn strictly_decreasing(&self) -> bool {
        let mut pts: Vec<_> = self.points.iter().map(|p| (p.value, p.breakdown.improvement_factor)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.windows(2).all(|w| w[0].0 == w[1].0 || w[1].1 < w[0].1)
    }

    /// Published counterpart of a point, where one exists.
    pub fn published_factor(&self, base: &RtoParams, value: f64) -> Option<f64> {
        (*base == RtoParams::REFERENCE && self.param == SweepParam::Cores && value == 128.0)
            .then_some(PUBLISHED_C128_FACTOR)
    }
}

/// Re-evaluates the model for each value of one parameter. Sweeping δ or C
/// upward must lower the factor; that is checked and reported as an error-free
/// property of the curve, see [`SensitivityCurve::strictly_decreasing`].
pub fn sensitivity(base: &RtoParams, param: SweepParam, values: &[f64]) -> Result<SensitivityCurve, DomainError> {
    if values.is_empty() {
        return Err(DomainError::EmptySweep);
    }
    let points = values
        .iter()
        .map(|&v| Ok(SweepPoint { value: v, breakdown: rto_breakdown(&param.apply(base, v))? }))
        .collect::<Result<Vec<_>, DomainError>>()?;
    Ok(SensitivityCurve { param, points })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TcoParams {
    pub events_per_week: f64,
    /// Cores busy for the whole hash RTO.
    pub hash_engaged_cores: f64,
    /// Cores busy for the whole meta RTO.
    pub meta_engaged_cores: f64,
    pub hash_rto_seconds: f64,
    pub meta_rto_seconds: f64,
    pub price_per_core_hour: f64,
    pub weeks_per_year: f64,
    /// Primary capacity in bytes; converted at 1e9 bytes per GB.
    pub capacity_bytes: f64,
    pub dedup_rate: f64,
    pub price_per_gb_month: f64,
}

impl Default for TcoParams {
    /// 17 events a week on 40-core nodes; meta engages 3.2% of the cores.
    fn default() -> Self {
        Self {
            events_per_week: 17.0,
            hash_engaged_cores: 40.0,
            meta_engaged_cores: 40.0 * 0.032,
            hash_rto_seconds: 14_549.0,
            meta_rto_seconds: 826.0,
            price_per_core_hour: 0.048,
            weeks_per_year: 52.0,
            capacity_bytes: 2.0e15,
            dedup_rate: 0.10,
            price_per_gb_month: 0.023,
        }
    }
}

impl TcoParams {
    pub fn validate(&self) -> Result<(), DomainError> {
        for (field, value) in [
            ("events_per_week", self.events_per_week),
            ("hash_engaged_cores", self.hash_engaged_cores),
            ("meta_engaged_cores", self.meta_engaged_cores),
            ("hash_rto_seconds", self.hash_rto_seconds),
            ("meta_rto_seconds", self.meta_rto_seconds),
            ("price_per_core_hour", self.price_per_core_hour),
            ("weeks_per_year", self.weeks_per_year),
            ("capacity_bytes", self.capacity_bytes),
            ("dedup_rate", self.dedup_rate),
            ("price_per_gb_month", self.price_per_gb_month),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(DomainError::Negative { field, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TcoReport {
    pub hash_core_hours_per_event: f64,
    pub meta_core_hours_per_event: f64,
    pub weekly_core_hours_saved: f64,
    pub annual_compute_saving: f64,
    pub annual_storage_saving: f64,
}

pub fn tco(t: &TcoParams) -> Result<TcoReport, DomainError> {
    t.validate()?;
    let hash = t.hash_engaged_cores * t.hash_rto_seconds / 3600.0;
    let meta = t.meta_engaged_cores * t.meta_rto_seconds / 3600.0;
    let weekly = t.events_per_week * (hash - meta);
    Ok(TcoReport {
        hash_core_hours_per_event: hash,
        meta_core_hours_per_event: meta,
        weekly_core_hours_saved: weekly,
        annual_compute_saving: weekly * t.weeks_per_year * t.price_per_core_hour,
        annual_storage_saving: t.capacity_bytes / 1e9 * t.dedup_rate * t.price_per_gb_month * 12.0,
    })
}
