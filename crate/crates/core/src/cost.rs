//! Closed-form cost and parameter counts of token-mixing units, and a report
//! comparing them with constructed models.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::mixing::MixerKind;
use crate::nn::named_shapes;
use crate::rng::Rng;

/// Rows of the reference cost table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum CostUnit {
    LinearChannel,
    LinearToken,
    SelfAttention,
    Fgu,
    Cgu,
    Tsgu,
    TinyAttention,
}

impl CostUnit {
    pub const ALL: [CostUnit; 7] = [
        CostUnit::LinearChannel,
        CostUnit::LinearToken,
        CostUnit::SelfAttention,
        CostUnit::Fgu,
        CostUnit::Cgu,
        CostUnit::Tsgu,
        CostUnit::TinyAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CostUnit::LinearChannel => "linear_channel",
            CostUnit::LinearToken => "linear_token",
            CostUnit::SelfAttention => "self_attention",
            CostUnit::Fgu => "fgu",
            CostUnit::Cgu => "cgu",
            CostUnit::Tsgu => "tsgu",
            CostUnit::TinyAttention => "tiny_attention",
        }
    }

    /// The table row of a mixer kind. Kinds without a row are an error.
    pub fn for_mixer(kind: MixerKind) -> Result<Self> {
        match kind {
            MixerKind::Sgu => Ok(CostUnit::LinearToken),
            MixerKind::Fgu => Ok(CostUnit::Fgu),
            MixerKind::Cgu => Ok(CostUnit::Cgu),
            MixerKind::Tsgu => Ok(CostUnit::Tsgu),
            MixerKind::SelfAttention => Ok(CostUnit::SelfAttention),
            MixerKind::CguPrime | MixerKind::Fnet => Err(Error::invalid(format!(
                "{kind} has no closed-form cost entry"
            ))),
        }
    }
}

/// Dimensions a cost expression may refer to. `d` is the unit's operating
/// channel width, `size` the filter length `l` or kernel size `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnitDims {
    pub n: u64,
    pub d: u64,
    pub size: u64,
}

/// Parameter count from the table; bias terms are not included.
pub fn analytic_params(unit: CostUnit, dims: UnitDims) -> u64 {
    let UnitDims { n, d, size } = dims;
    match unit {
        CostUnit::LinearChannel => d * d,
        CostUnit::LinearToken => n * n,
        CostUnit::SelfAttention => 4 * d * d,
        CostUnit::Fgu | CostUnit::Cgu => size * d,
        CostUnit::Tsgu => 0,
        CostUnit::TinyAttention => 2 * d * d,
    }
}

/// The table's complexity expression, evaluated as printed.
pub fn analytic_flops(unit: CostUnit, dims: UnitDims) -> Result<f64> {
    if dims.n == 0 {
        return Err(Error::invalid("cost expressions need N ≥ 1"));
    }
    let (n, d, s) = (dims.n as f64, dims.d as f64, dims.size as f64);
    Ok(match unit {
        CostUnit::LinearChannel => n * d * d,
        CostUnit::LinearToken => n * n * d,
        CostUnit::SelfAttention => 4.0 * n * d * d + 2.0 * n * n * d,
        CostUnit::Fgu => n * d * n.log2() + n * d,
        CostUnit::Cgu => s * n * d * d + n * d,
        CostUnit::Tsgu => n + n * d,
        CostUnit::TinyAttention => 2.0 * n * d * d + 2.0 * n * n * d,
    })
}

/// Multiplies performed by this crate's forward pass of the unit, including
/// the gating product where the unit has one.
pub fn implementation_macs(unit: CostUnit, dims: UnitDims) -> u64 {
    let UnitDims { n, d, size } = dims;
    let gating = n * d;
    match unit {
        CostUnit::LinearChannel => n * d * d,
        CostUnit::LinearToken => n * n * d,
        // projections, scores and weighted sum
        CostUnit::SelfAttention | CostUnit::TinyAttention => 4 * n * d * d + 2 * n * n * d,
        CostUnit::Fgu => {
            // three transforms of the padded length and one spectral product per channel
            let p = n.next_power_of_two();
            let log = u64::from(p.trailing_zeros());
            d * (3 * 2 * p * log + 4 * p) + gating
        }
        CostUnit::Cgu => size * n * d + gating,
        CostUnit::Tsgu => gating,
    }
}

/// Smallest `N ≤ limit` at which `a`'s table cost exceeds `b`'s.
pub fn crossover(a: CostUnit, b: CostUnit, d: u64, size: u64, limit: u64) -> Option<u64> {
    (1..=limit).find(|&n| {
        let dims = UnitDims { n, d, size };
        analytic_flops(a, dims).unwrap() > analytic_flops(b, dims).unwrap()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Term {
    /// Weights covered by a table formula.
    Weight,
    Bias,
    Norm,
}

impl Term {
    fn name(self) -> &'static str {
        match self {
            Term::Weight => "weight",
            Term::Bias => "bias",
            Term::Norm => "norm",
        }
    }
}

/// One named tensor family, with layer indices folded into `*`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub name: String,
    pub term: Term,
    pub copies: usize,
    /// Scalars per copy in the constructed model.
    pub measured: u64,
    /// Scalars per copy predicted by the table, or the measured count for
    /// bias and norm terms.
    pub analytic: u64,
}

impl ReportRow {
    pub fn delta(&self) -> i64 {
        self.measured as i64 - self.analytic as i64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamReport {
    pub config: EncoderConfig,
    pub rows: Vec<ReportRow>,
    /// Exact count of the constructed model.
    pub measured_total: u64,
}

impl ParamReport {
    pub fn analytic_total(&self) -> u64 {
        self.rows.iter().map(|r| r.analytic * r.copies as u64).sum()
    }

    /// Rows whose measured count differs from the table prediction.
    pub fn discrepancies(&self) -> Vec<&ReportRow> {
        self.rows.iter().filter(|r| r.delta() != 0).collect()
    }

    /// Per-copy scalars of rows belonging to the token mixer.
    pub fn mixer_total(&self, term: Option<Term>) -> u64 {
        self.rows
            .iter()
            .filter(|r| r.name.contains(".mixer."))
            .filter(|r| term.is_none_or(|t| r.term == t))
            .map(|r| r.measured)
            .sum()
    }

    pub fn render_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(4)
            .max(4);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:<6}  {:>6}  {:>10}  {:>10}  {:>8}",
            "name", "term", "copies", "measured", "analytic", "delta"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:<6}  {:>6}  {:>10}  {:>10}  {:>8}",
                r.name,
                r.term.name(),
                r.copies,
                r.measured,
                r.analytic,
                r.delta()
            );
        }
        let _ = writeln!(
            out,
            "total measured {} analytic {}",
            self.measured_total,
            self.analytic_total()
        );
        out
    }

    /// Machine-readable `key=value` records, one per row plus a total.
    pub fn render_records(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "param name={} term={} copies={} measured={} analytic={} delta={}",
                r.name,
                r.term.name(),
                r.copies,
                r.measured,
                r.analytic,
                r.delta()
            );
        }
        let _ = writeln!(
            out,
            "total measured={} analytic={} discrepancies={}",
            self.measured_total,
            self.analytic_total(),
            self.discrepancies().len()
        );
        out
    }
}

fn fold_layer_index(name: &str) -> String {
    name.split('.')
        .map(|part| {
            if part.chars().all(|c| c.is_ascii_digit()) {
                "*"
            } else {
                part
            }
        })
        .collect::<Vec<_>>()
        .join(".")
}

/// Table prediction for one named weight tensor of a model built from `cfg`.
fn analytic_weight(cfg: &EncoderConfig, name: &str, shape: &[usize]) -> u64 {
    let m = &cfg.mixer;
    let count: u64 = shape.iter().map(|&s| s as u64).product();
    let leaf = name.rsplit('.').next().unwrap_or(name);
    if name.contains(".mixer.tiny.") {
        // the whole tiny branch is predicted on its query projection row
        return if name.ends_with("query.weight") {
            analytic_params(
                CostUnit::TinyAttention,
                UnitDims {
                    n: 0,
                    d: m.tiny_attention.as_ref().map_or(0, |t| t.dim as u64),
                    size: 0,
                },
            )
        } else {
            0
        };
    }
    if name.contains(".mixer.attn.") {
        return if name.ends_with("query.weight") {
            analytic_params(
                CostUnit::SelfAttention,
                UnitDims {
                    n: 0,
                    d: cfg.d_model as u64,
                    size: 0,
                },
            )
        } else {
            0
        };
    }
    if name.contains(".mixer.") {
        return match (m.kind, leaf) {
            (MixerKind::Fgu | MixerKind::Cgu | MixerKind::CguPrime, "filter" | "kernel") => {
                shape[1] as u64 * shape[0] as u64
            }
            (MixerKind::Sgu, "proj") => analytic_params(
                CostUnit::LinearToken,
                UnitDims {
                    n: m.n_max as u64,
                    d: 0,
                    size: 0,
                },
            ),
            // the channel projection of the primed unit is a square channel linear
            (MixerKind::CguPrime, "weight") => analytic_params(
                CostUnit::LinearChannel,
                UnitDims {
                    n: 0,
                    d: shape[0] as u64,
                    size: 0,
                },
            ),
            _ => count,
        };
    }
    // channel linears and front-end convolutions: input × output weights
    count
}

/// Build the model described by `cfg` and compare every named tensor with
/// the table. Bias and norm tensors are reported as documented extra terms.
pub fn verify_params(cfg: &EncoderConfig) -> Result<ParamReport> {
    let model = Encoder::new(cfg, &mut Rng::new(0))?;
    let mut rows: BTreeMap<String, ReportRow> = BTreeMap::new();
    let mut order = Vec::new();
    let mut measured_total = 0;
    for (name, shape) in named_shapes(&model) {
        let count: u64 = shape.iter().map(|&s| s as u64).product();
        measured_total += count;
        let leaf = name.rsplit('.').next().unwrap_or(&name);
        let term = match leaf {
            "gamma" | "beta" => Term::Norm,
            "bias" => Term::Bias,
            _ => Term::Weight,
        };
        let analytic = match term {
            Term::Weight => analytic_weight(cfg, &name, &shape),
            _ => count,
        };
        let key = fold_layer_index(&name);
        match rows.get_mut(&key) {
            Some(r) => r.copies += 1,
            None => {
                order.push(key.clone());
                rows.insert(
                    key.clone(),
                    ReportRow {
                        name: key,
                        term,
                        copies: 1,
                        measured: count,
                        analytic,
                    },
                );
            }
        }
    }
    let rows = order
        .into_iter()
        .map(|k| rows.remove(&k).unwrap())
        .collect();
    Ok(ParamReport {
        config: cfg.clone(),
        rows,
        measured_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::count_parameters;
    use crate::mixing::{TinyAttentionConfig, TokenMixerConfig};

    fn dims(n: u64, d: u64, size: u64) -> UnitDims {
        UnitDims { n, d, size }
    }

    fn default_with(kind: MixerKind) -> EncoderConfig {
        EncoderConfig {
            mixer: TokenMixerConfig::new(kind),
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn table_parameter_entries() {
        assert_eq!(analytic_params(CostUnit::Tsgu, dims(0, 512, 0)), 0);
        assert_eq!(analytic_params(CostUnit::Cgu, dims(0, 512, 15)), 7680);
        assert_eq!(analytic_params(CostUnit::Fgu, dims(0, 512, 15)), 7680);
        assert_eq!(analytic_params(CostUnit::SelfAttention, dims(0, 4, 0)), 64);
        assert_eq!(
            analytic_params(CostUnit::TinyAttention, dims(0, 128, 0)),
            32768
        );
        assert_eq!(analytic_params(CostUnit::LinearChannel, dims(0, 7, 0)), 49);
        assert_eq!(analytic_params(CostUnit::LinearToken, dims(9, 0, 0)), 81);
    }

    #[test]
    fn table_flop_entries() {
        assert_eq!(
            analytic_flops(CostUnit::Tsgu, dims(10, 4, 0)).unwrap(),
            50.0
        );
        assert_eq!(analytic_flops(CostUnit::Fgu, dims(8, 2, 15)).unwrap(), 64.0);
        assert_eq!(
            analytic_flops(CostUnit::Cgu, dims(3, 2, 5)).unwrap(),
            5.0 * 3.0 * 4.0 + 6.0
        );
        assert_eq!(
            analytic_flops(CostUnit::SelfAttention, dims(2, 3, 0)).unwrap(),
            72.0 + 24.0
        );
        assert!(analytic_flops(CostUnit::Fgu, dims(0, 2, 1)).is_err());
    }

    #[test]
    fn flops_grow_with_length() {
        for unit in CostUnit::ALL {
            let mut last = 0.0;
            for n in 1..200 {
                let f = analytic_flops(unit, dims(n, 16, 15)).unwrap();
                assert!(f > last, "{unit:?} at {n}");
                last = f;
            }
        }
    }

    #[test]
    fn attention_overtakes_the_filter_unit() {
        let n = crossover(CostUnit::SelfAttention, CostUnit::Fgu, 256, 15, 1 << 20).unwrap();
        assert_eq!(n, 1);
        let cgu_vs_attention = crossover(CostUnit::SelfAttention, CostUnit::Cgu, 256, 15, 1 << 20);
        // 4ND² + 2N²D > 15ND² + ND  ⇔  2N > 11D + 1
        assert_eq!(cgu_vs_attention, Some((11 * 256 + 1) / 2 + 1));
    }

    #[test]
    fn cgu_table_entry_is_quadratic_in_width() {
        let d = dims(100, 512, 15);
        let table = analytic_flops(CostUnit::Cgu, d).unwrap();
        let ours = implementation_macs(CostUnit::Cgu, d) as f64;
        assert_eq!(ours, 15.0 * 100.0 * 512.0 + 100.0 * 512.0);
        assert!(table / ours > 400.0);
    }

    #[test]
    fn kinds_without_a_row() {
        assert!(CostUnit::for_mixer(MixerKind::CguPrime).is_err());
        assert!(CostUnit::for_mixer(MixerKind::Fnet).is_err());
        assert_eq!(
            CostUnit::for_mixer(MixerKind::Tsgu).unwrap(),
            CostUnit::Tsgu
        );
    }

    #[test]
    fn report_totals_match_the_model() {
        for kind in [MixerKind::Cgu, MixerKind::Tsgu, MixerKind::SelfAttention] {
            let mut cfg = default_with(kind);
            cfg.layers = 2;
            let report = verify_params(&cfg).unwrap();
            assert_eq!(report.measured_total as usize, count_parameters(&cfg));
            let measured: u64 = report
                .rows
                .iter()
                .map(|r| r.measured * r.copies as u64)
                .sum();
            assert_eq!(measured, report.measured_total);
        }
    }

    #[test]
    fn gated_mixers_have_no_discrepancy() {
        for kind in [
            MixerKind::Fgu,
            MixerKind::Cgu,
            MixerKind::CguPrime,
            MixerKind::Tsgu,
        ] {
            let mut cfg = default_with(kind);
            cfg.layers = 1;
            let report = verify_params(&cfg).unwrap();
            assert!(report.discrepancies().is_empty(), "{kind}");
            assert_eq!(report.analytic_total(), report.measured_total);
        }
    }

    #[test]
    fn tiny_attention_discrepancy_is_listed() {
        let mut cfg = default_with(MixerKind::Tsgu);
        cfg.layers = 1;
        cfg.mixer.tiny_attention = Some(TinyAttentionConfig::default());
        let report = verify_params(&cfg).unwrap();
        let names: Vec<&str> = report
            .discrepancies()
            .iter()
            .map(|r| r.name.as_str())
            .collect();
        assert!(!names.is_empty());
        assert!(names.iter().all(|n| n.contains(".mixer.tiny.")));
        let tiny: Vec<&ReportRow> = report
            .rows
            .iter()
            .filter(|r| r.name.contains(".mixer.tiny.") && r.term == Term::Weight)
            .collect();
        let predicted: u64 = tiny.iter().map(|r| r.analytic).sum();
        let measured: u64 = tiny.iter().map(|r| r.measured).sum();
        assert_eq!(predicted, 2 * 128 * 128);
        // three 256→128 projections and a 128→512 output
        assert_eq!(measured, 3 * 256 * 128 + 128 * 512);
    }

    #[test]
    fn mixer_deltas_between_configs() {
        let mut cgu = default_with(MixerKind::Cgu);
        cgu.layers = 1;
        let tsgu = EncoderConfig {
            mixer: TokenMixerConfig::new(MixerKind::Tsgu),
            ..cgu.clone()
        };
        let prime = EncoderConfig {
            mixer: TokenMixerConfig::new(MixerKind::CguPrime),
            ..cgu.clone()
        };
        let count = |c: &EncoderConfig| verify_params(c).unwrap().measured_total as i64;
        // kernel plus the per-channel gate bias
        assert_eq!(count(&cgu) - count(&tsgu), 15 * 512 + 512);
        assert_eq!(count(&prime) - count(&cgu), 512 * 512 + 512);
        let report = verify_params(&cgu).unwrap();
        assert_eq!(report.mixer_total(Some(Term::Weight)), 7680);
    }

    #[test]
    fn renders_both_formats() {
        let mut cfg = default_with(MixerKind::Cgu);
        cfg.layers = 2;
        let report = verify_params(&cfg).unwrap();
        let table = report.render_table();
        assert!(table.contains("blocks.*.mixer.gate.kernel"));
        let records = report.render_records();
        assert!(records.contains("param name=blocks.*.mixer.gate.kernel term=weight copies=2 measured=7680 analytic=7680 delta=0"));
        assert!(records
            .lines()
            .last()
            .unwrap()
            .starts_with("total measured="));
    }
}
