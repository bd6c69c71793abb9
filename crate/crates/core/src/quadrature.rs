//! Globally adaptive Gauss–Kronrod (7/15 point) quadrature.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5, 7).
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_PANELS: usize = 20_000;

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> Panel {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let pair = f(c - r * XGK[j]) + f(c + r * XGK[j]);
        k += WGK[j] * pair;
        if j % 2 == 1 {
            g += WG[j / 2] * pair;
        }
    }
    Panel { a, b, value: k * r, error: ((k - g) * r).abs() }
}

/// Integrates `f` over `[a, b]` to relative tolerance `rel_tol`, starting from
/// `initial_panels` equal panels and repeatedly bisecting the panel with the
/// largest error estimate.
///
/// Returns the best estimate reached if the panel budget runs out.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64, initial_panels: usize) -> f64 {
    if a == b {
        return 0.0;
    }
    let n = initial_panels.max(1);
    let width = (b - a) / n as f64;
    let mut heap: BinaryHeap<Panel> = (0..n)
        .map(|i| {
            let lo = a + width * i as f64;
            let hi = if i + 1 == n { b } else { lo + width };
            kronrod(&f, lo, hi)
        })
        .collect();
    while heap.len() < MAX_PANELS {
        let total: f64 = heap.iter().map(|p| p.value).sum();
        let err: f64 = heap.iter().map(|p| p.error).sum();
        if err <= rel_tol * total.abs() || err <= f64::MIN_POSITIVE {
            break;
        }
        let worst = heap.pop().expect("heap is non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            heap.push(worst);
            break;
        }
        heap.push(kronrod(&f, worst.a, mid));
        heap.push(kronrod(&f, mid, worst.b));
    }
    let mut values: Vec<Panel> = heap.into_vec();
    values.sort_by(|p, q| p.a.total_cmp(&q.a));
    crate::stats::pairwise_sum(&values.iter().map(|p| p.value).collect::<Vec<_>>())
}
