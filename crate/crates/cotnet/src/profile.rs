//! Static cost accounting: per-layer parameter and multiply-accumulate
//! counts for a built network at a given input extent.
//!
//! Counting convention: convolutions, the classifier, the CoT value
//! aggregation and the CoT fusion projections carry MACs; normalization,
//! activation, pooling, softmax and residual adds are free. One MAC is
//! one multiply plus one accumulate, so doubling these numbers gives the
//! usual FLOP figure. Counts are per sample.

use crate::cot::CotUnit;
use crate::element::Element;
use crate::error::Result;
use crate::layers::{BatchNorm2dLayer, Conv2dLayer};
use crate::models::{Network, Unit, STAGE_NAMES};

/// One-line statement of the counting convention, placed at the head of
/// every rendered report so numbers are never quoted without it.
pub const COUNTING_CONVENTION: &str = "convention: 1 op = 1 multiply-accumulate; \
counted: conv, linear, attention relation/aggregation; \
ignored: norm, relu, pooling, softmax, elementwise adds";

/// One line of the cost table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostRow {
    pub path: String,
    pub params: u64,
    pub macs: u64,
}

/// Per-layer cost table for one model at one input extent.
#[derive(Debug, Clone)]
pub struct CostReport {
    pub model: String,
    pub input: usize,
    pub rows: Vec<CostRow>,
}

impl CostReport {
    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    /// CSV rendering: `layer_path,params,macs` per row plus a total line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer_path,params,macs\n");
        for row in &self.rows {
            out.push_str(&format!("{},{},{}\n", row.path, row.params, row.macs));
        }
        out.push_str(&format!("total,{},{}\n", self.total_params(), self.total_macs()));
        out
    }
}

/// Reference budget a profiled model is compared against (parameters in
/// millions, MACs in billions, tolerances as fractions).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceBudget {
    pub params: f64,
    pub params_tol: f64,
    pub macs: f64,
    pub macs_tol: f64,
}

/// Published reference budgets at 224x224 input for the ImageNet-scale
/// models. Baselines are tabulated to four digits and held to tighter
/// tolerances than the contextual models.
pub fn reference_budget(model: &str) -> Option<ReferenceBudget> {
    let line = |params, params_tol, macs, macs_tol| ReferenceBudget {
        params,
        params_tol,
        macs,
        macs_tol,
    };
    match model {
        "resnet50" => Some(line(25.56e6, 0.005, 4.12e9, 0.02)),
        "resnext50" => Some(line(25.03e6, 0.005, 4.27e9, 0.02)),
        "cotnet50" => Some(line(22.21e6, 0.05, 3.28e9, 0.05)),
        "cotnext50" => Some(line(30.05e6, 0.05, 4.33e9, 0.05)),
        _ => None,
    }
}

/// A profiled model lined up against its reference budget, if one exists.
#[derive(Debug, Clone)]
pub struct BudgetLine {
    pub model: String,
    pub params: u64,
    pub macs: u64,
    pub reference: Option<ReferenceBudget>,
}

impl BudgetLine {
    fn within(actual: u64, reference: f64, tol: f64) -> bool {
        (actual as f64 - reference).abs() <= tol * reference
    }

    /// None when there is no reference to compare against.
    pub fn params_ok(&self) -> Option<bool> {
        self.reference.map(|r| Self::within(self.params, r.params, r.params_tol))
    }

    pub fn macs_ok(&self) -> Option<bool> {
        self.reference.map(|r| Self::within(self.macs, r.macs, r.macs_tol))
    }
}

pub fn budget_line(report: &CostReport) -> BudgetLine {
    BudgetLine {
        model: report.model.clone(),
        params: report.total_params(),
        macs: report.total_macs(),
        reference: reference_budget(&report.model),
    }
}

fn delta_pct(actual: u64, reference: f64) -> f64 {
    (actual as f64 - reference) / reference * 100.0
}

fn verdict(ok: Option<bool>) -> &'static str {
    match ok {
        Some(true) => "pass",
        Some(false) => "FAIL",
        None => "-",
    }
}

/// CSV comparison against the embedded reference budgets. Models without
/// a reference leave the reference columns at `-` and pass vacuously.
pub fn budget_table_csv(lines: &[BudgetLine]) -> String {
    let mut out = String::from(
        "model,params,macs,ref_params,ref_macs,params_delta_pct,macs_delta_pct,params_check,macs_check\n",
    );
    for l in lines {
        match l.reference {
            Some(r) => out.push_str(&format!(
                "{},{},{},{:.0},{:.0},{:+.2},{:+.2},{},{}\n",
                l.model,
                l.params,
                l.macs,
                r.params,
                r.macs,
                delta_pct(l.params, r.params),
                delta_pct(l.macs, r.macs),
                verdict(l.params_ok()),
                verdict(l.macs_ok()),
            )),
            None => out.push_str(&format!("{},{},{},-,-,-,-,-,-\n", l.model, l.params, l.macs)),
        }
    }
    out
}

/// Aligned text rendering of the same comparison, convention line first.
pub fn budget_table_text(lines: &[BudgetLine]) -> String {
    let mut out = format!("{COUNTING_CONVENTION}\n");
    out.push_str(&format!(
        "{:<18} {:>12} {:>14} {:>9} {:>9} {:>6} {:>6}\n",
        "model", "params", "macs", "d_params", "d_macs", "p_chk", "m_chk"
    ));
    for l in lines {
        let (dp, dm) = match l.reference {
            Some(r) => (
                format!("{:+.2}%", delta_pct(l.params, r.params)),
                format!("{:+.2}%", delta_pct(l.macs, r.macs)),
            ),
            None => ("-".into(), "-".into()),
        };
        out.push_str(&format!(
            "{:<18} {:>12} {:>14} {:>9} {:>9} {:>6} {:>6}\n",
            l.model,
            l.params,
            l.macs,
            dp,
            dm,
            verdict(l.params_ok()),
            verdict(l.macs_ok()),
        ));
    }
    out
}

/// False only when some line has a reference and misses its window.
pub fn budget_table_passes(lines: &[BudgetLine]) -> bool {
    lines
        .iter()
        .all(|l| l.params_ok().unwrap_or(true) && l.macs_ok().unwrap_or(true))
}

fn conv_row<E: Element>(rows: &mut Vec<CostRow>, path: String, layer: &Conv2dLayer<E>, h: usize, w: usize) {
    rows.push(CostRow { path, params: layer.param_count(), macs: layer.macs(h, w) });
}

fn bn_row<E: Element>(rows: &mut Vec<CostRow>, path: String, layer: &BatchNorm2dLayer<E>) {
    rows.push(CostRow { path, params: layer.param_count(), macs: 0 });
}

fn cot_rows<E: Element>(rows: &mut Vec<CostRow>, prefix: &str, unit: &CotUnit<E>, h: usize, w: usize) {
    let (h, w) = unit.out_hw(h, w);
    let p = |leaf: &str| format!("{prefix}.{leaf}");
    conv_row(rows, p("key_conv"), &unit.key_conv, h, w);
    bn_row(rows, p("key_bn"), &unit.key_bn);
    if let Some(d) = &unit.dynamic {
        conv_row(rows, p("value_conv"), &d.value_conv, h, w);
        bn_row(rows, p("value_bn"), &d.value_bn);
        conv_row(rows, p("theta_conv"), &d.theta_conv, h, w);
        bn_row(rows, p("theta_bn"), &d.theta_bn);
        conv_row(rows, p("delta_conv"), &d.delta_conv, h, w);
        let k2 = (unit.config.kernel * unit.config.kernel) as u64;
        rows.push(CostRow {
            path: p("aggregate"),
            params: 0,
            macs: (h * w) as u64 * k2 * unit.config.channels as u64,
        });
    }
    if let Some(fu) = &unit.fuse {
        conv_row(rows, p("fuse.squeeze_conv"), &fu.squeeze_conv, 1, 1);
        bn_row(rows, p("fuse.squeeze_bn"), &fu.squeeze_bn);
        conv_row(rows, p("fuse.excite_static"), &fu.excite_static, 1, 1);
        conv_row(rows, p("fuse.excite_dynamic"), &fu.excite_dynamic, 1, 1);
    }
}

impl<E: Element> Network<E> {
    /// Per-layer cost table for a square input of extent `input`. Purely
    /// arithmetic: no tensors flow, so profiling the largest models is
    /// immediate.
    pub fn cost_report(&self, input: usize) -> Result<CostReport> {
        let mut rows = Vec::new();
        let (mut h, mut w) = self.stem_conv.out_hw(input, input);
        conv_row(&mut rows, "stem.conv".into(), &self.stem_conv, input, input);
        bn_row(&mut rows, "stem.bn".into(), &self.stem_bn);
        // Stem max pool: 3x3, stride 2, padding 1.
        h = (h + 2 - 3) / 2 + 1;
        w = (w + 2 - 3) / 2 + 1;
        for (si, blocks) in self.stages.iter().enumerate() {
            for (bi, block) in blocks.iter().enumerate() {
                let prefix = format!("{}.block{bi}", STAGE_NAMES[si]);
                conv_row(&mut rows, format!("{prefix}.conv1"), &block.conv1, h, w);
                bn_row(&mut rows, format!("{prefix}.bn1"), &block.bn1);
                let (ho, wo) = match &block.unit {
                    Unit::Conv(conv) => {
                        conv_row(&mut rows, format!("{prefix}.conv2"), conv, h, w);
                        conv.out_hw(h, w)
                    }
                    Unit::Cot(unit) => {
                        cot_rows(&mut rows, &format!("{prefix}.cot"), unit, h, w);
                        unit.out_hw(h, w)
                    }
                };
                bn_row(&mut rows, format!("{prefix}.bn2"), &block.bn2);
                conv_row(&mut rows, format!("{prefix}.conv3"), &block.conv3, ho, wo);
                bn_row(&mut rows, format!("{prefix}.bn3"), &block.bn3);
                if let Some((conv, bn)) = &block.down {
                    conv_row(&mut rows, format!("{prefix}.down.conv"), conv, h, w);
                    bn_row(&mut rows, format!("{prefix}.down.bn"), bn);
                }
                h = ho;
                w = wo;
            }
        }
        rows.push(CostRow {
            path: "fc".into(),
            params: self.fc.param_count(),
            macs: self.fc.macs(),
        });
        Ok(CostReport { model: self.spec.name.clone(), input, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, canonical};

    fn report(name: &str, input: usize) -> CostReport {
        let spec = canonical(name).unwrap();
        let net = build_model::<f32>(&spec, 0).unwrap();
        net.cost_report(input).unwrap()
    }

    #[test]
    fn counted_params_match_allocated_tensors() {
        for name in ["resnet50", "resnext50", "cotnet50", "cotnext50", "cotnet_tiny"] {
            let spec = canonical(name).unwrap();
            let net = build_model::<f32>(&spec, 0).unwrap();
            let rep = net.cost_report(224).unwrap();
            assert_eq!(
                rep.total_params(),
                net.param_count(),
                "{name}: cost table disagrees with allocated parameters"
            );
        }
    }

    #[test]
    fn imagenet_scale_budgets_hit_reference_windows() {
        for name in ["resnet50", "resnext50", "cotnet50", "cotnext50"] {
            let line = budget_line(&report(name, 224));
            assert_eq!(line.params_ok(), Some(true), "{name} params {}", line.params);
            assert_eq!(line.macs_ok(), Some(true), "{name} macs {}", line.macs);
        }
    }

    #[test]
    fn known_exact_totals_are_stable() {
        assert_eq!(report("resnet50", 224).total_params(), 25_557_032);
        assert_eq!(report("cotnet50", 224).total_params(), 22_213_920);
        assert_eq!(report("resnext50", 224).total_params(), 25_028_904);
        assert_eq!(report("cotnext50", 224).total_params(), 30_033_532);
    }

    #[test]
    fn contextual_swap_shrinks_resnet_and_grows_resnext() {
        let resnet = report("resnet50", 224);
        let cotnet = report("cotnet50", 224);
        let resnext = report("resnext50", 224);
        let cotnext = report("cotnext50", 224);
        assert!(cotnet.total_params() < resnet.total_params());
        assert!(cotnet.total_macs() < resnet.total_macs());
        assert!(cotnext.total_params() > resnext.total_params());
        let (a, b) = (cotnext.total_macs() as f64, resnext.total_macs() as f64);
        assert!((a - b).abs() <= 0.02 * b, "cotnext {a} vs resnext {b}");
    }

    #[test]
    fn csv_has_header_per_layer_rows_and_total() {
        let rep = report("cotnet_tiny", 32);
        let csv = rep.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("layer_path,params,macs"));
        let last = csv.lines().last().unwrap();
        assert!(last.starts_with("total,"));
        assert_eq!(csv.lines().count(), rep.rows.len() + 2);
        assert!(csv.contains("res2.block0.cot.aggregate,0,"));
    }

    #[test]
    fn deeper_variants_profile_without_references() {
        let line = budget_line(&report("cotnet101", 224));
        assert!(line.reference.is_none());
        assert!(line.params > 35_000_000 && line.params < 45_000_000);
    }

    #[test]
    fn budget_table_renders_and_judges() {
        let lines = vec![
            budget_line(&report("resnet50", 224)),
            budget_line(&report("cotnet101", 224)),
        ];
        let csv = budget_table_csv(&lines);
        assert!(csv.starts_with("model,params,macs,ref_params,ref_macs,"));
        assert!(csv.contains("resnet50,25557032,4089184256,25560000,4120000000,"));
        assert!(csv.contains(",pass,pass\n"));
        assert!(csv.contains("cotnet101,") && csv.contains(",-,-\n"));
        let text = budget_table_text(&lines);
        assert!(text.starts_with(COUNTING_CONVENTION));
        assert!(budget_table_passes(&lines), "unreferenced models pass vacuously");

        // A line that misses its window flips the judgement.
        let mut bad = budget_line(&report("resnet50", 224));
        bad.reference = Some(ReferenceBudget {
            params: 1e6,
            params_tol: 0.005,
            macs: 4.12e9,
            macs_tol: 0.02,
        });
        assert!(!budget_table_passes(&[bad.clone()]));
        assert!(budget_table_csv(&[bad]).contains("FAIL"));
    }

    #[test]
    fn empty_budget_table_is_header_only_and_passes() {
        assert_eq!(budget_table_csv(&[]).lines().count(), 1);
        assert!(budget_table_passes(&[]));
    }
}
