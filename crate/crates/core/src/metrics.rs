//! Overlap and boundary-distance metrics for binary masks.

use crate::error::{Error, Result};
use crate::nn::stable_sigmoid;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(h: usize, w: usize, bits: Vec<bool>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::InvalidShape(format!("mask extents must be >= 1, got {h}x{w}")));
        }
        if bits.len() != h * w {
            return Err(Error::InvalidShape(format!("{h}x{w} mask needs {} bits, got {}", h * w, bits.len())));
        }
        Ok(Self { h, w, bits })
    }

    pub fn empty(h: usize, w: usize) -> Self {
        Self { h, w, bits: vec![false; h * w] }
    }

    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..h * w).map(|i| f(i / w, i % w)).collect();
        Self { h, w, bits }
    }

    /// Pixels whose probability `sigmoid(logit)` exceeds `threshold`.
    /// Reads channel 0 of sample 0.
    pub fn from_logits<T: Real>(logits: &Tensor<T>, threshold: f64) -> Self {
        let s = logits.shape();
        let bits = logits.data()[..s.plane()].iter().map(|&v| stable_sigmoid(v.to_f64()) > threshold).collect();
        Self { h: s.h, w: s.w, bits }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.w + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// The mask as a `[1, 1, h, w]` tensor of zeros and ones.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self.bits.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
        Tensor::from_vec(crate::Shape { n: 1, c: 1, h: self.h, w: self.w }, data).expect("mask shape")
    }

    fn same_extents(&self, other: &BinaryMask) -> Result<()> {
        if (self.h, self.w) != (other.h, other.w) {
            return Err(Error::InvalidShape(format!(
                "mask extents differ: {}x{} vs {}x{}",
                self.h, self.w, other.h, other.w
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Both masks empty: Dice and IoU are defined as 1.
    pub fn is_vacuous(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    /// Dice as an exact fraction `2tp / (2tp + fp + fn)`.
    pub fn dice_ratio(&self) -> (u64, u64) {
        (2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    /// IoU as an exact fraction `tp / (tp + fp + fn)`.
    pub fn iou_ratio(&self) -> (u64, u64) {
        (self.tp, self.tp + self.fp + self.fn_)
    }

    pub fn dice(&self) -> f64 {
        if self.is_vacuous() {
            return 1.0;
        }
        let (num, den) = self.dice_ratio();
        num as f64 / den as f64
    }

    pub fn iou(&self) -> f64 {
        if self.is_vacuous() {
            return 1.0;
        }
        let (num, den) = self.iou_ratio();
        num as f64 / den as f64
    }

    /// Pixel accuracy `(tp + tn) / total`.
    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }
}

pub fn confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts> {
    pred.same_extents(gt)?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.bits.iter().zip(&gt.bits) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Foreground pixels with at least one 4-neighbour that is background or
/// outside the image, as `(y, x)` in row-major order.
pub fn boundary(mask: &BinaryMask) -> Vec<(usize, usize)> {
    let (h, w) = (mask.h, mask.w);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let edge = y == 0
                || x == 0
                || y == h - 1
                || x == w - 1
                || !mask.get(y - 1, x)
                || !mask.get(y + 1, x)
                || !mask.get(y, x - 1)
                || !mask.get(y, x + 1);
            if edge {
                out.push((y, x));
            }
        }
    }
    out
}

/// 1-D squared Euclidean distance transform (Felzenszwalb & Huttenlocher)
/// of `f`, where `f[i]` is `None` for "no site".
fn edt_1d(f: &[Option<u64>], out: &mut [Option<u64>]) {
    let n = f.len();
    let sites: Vec<usize> = (0..n).filter(|&i| f[i].is_some()).collect();
    if sites.is_empty() {
        out.iter_mut().for_each(|o| *o = None);
        return;
    }
    let val = |q: usize| f[q].expect("site") as f64 + (q * q) as f64;
    // lower envelope of parabolas
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    for &q in &sites {
        loop {
            let Some(&p) = v.last() else {
                v.push(q);
                z.push(f64::NEG_INFINITY);
                break;
            };
            let s = (val(q) - val(p)) / (2.0 * (q as f64 - p as f64));
            if s <= *z.last().expect("boundary") {
                v.pop();
                z.pop();
            } else {
                v.push(q);
                z.push(s);
                break;
            }
        }
    }
    z.push(f64::INFINITY);
    let mut k = 0;
    for (x, o) in out.iter_mut().enumerate() {
        while z[k + 1] < x as f64 {
            k += 1;
        }
        let p = v[k];
        let d = x.abs_diff(p) as u64;
        *o = Some(d * d + f[p].expect("site"));
    }
}

/// Squared distance from every pixel to the nearest point of `points`.
fn squared_distance_field(h: usize, w: usize, points: &[(usize, usize)]) -> Vec<Option<u64>> {
    let mut grid = vec![None; h * w];
    for &(y, x) in points {
        grid[y * w + x] = Some(0);
    }
    let mut col_in = vec![None; h];
    let mut col_out = vec![None; h];
    for x in 0..w {
        for y in 0..h {
            col_in[y] = grid[y * w + x];
        }
        edt_1d(&col_in, &mut col_out);
        for y in 0..h {
            grid[y * w + x] = col_out[y];
        }
    }
    let mut row_out = vec![None; w];
    for y in 0..h {
        edt_1d(&grid[y * w..(y + 1) * w], &mut row_out);
        grid[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    grid
}

fn directed_sum(from: &[(usize, usize)], field: &[Option<u64>], w: usize) -> f64 {
    from.iter().map(|&(y, x)| (field[y * w + x].expect("non-empty target") as f64).sqrt()).sum()
}

/// Symmetric average surface distance between the two mask boundaries, in
/// pixels. `None` when either boundary is empty.
pub fn assd(pred: &BinaryMask, gt: &BinaryMask) -> Result<Option<f64>> {
    pred.same_extents(gt)?;
    let (bp, bg) = (boundary(pred), boundary(gt));
    if bp.is_empty() || bg.is_empty() {
        return Ok(None);
    }
    let (h, w) = (pred.h, pred.w);
    let to_gt = squared_distance_field(h, w, &bg);
    let to_pred = squared_distance_field(h, w, &bp);
    let total = directed_sum(&bp, &to_gt, w) + directed_sum(&bg, &to_pred, w);
    Ok(Some(total / (bp.len() + bg.len()) as f64))
}

/// One-directional variant: mean distance from each predicted boundary point
/// to the nearest ground-truth boundary point.
pub fn assd_directed(pred: &BinaryMask, gt: &BinaryMask) -> Result<Option<f64>> {
    pred.same_extents(gt)?;
    let (bp, bg) = (boundary(pred), boundary(gt));
    if bp.is_empty() || bg.is_empty() {
        return Ok(None);
    }
    let to_gt = squared_distance_field(pred.h, pred.w, &bg);
    Ok(Some(directed_sum(&bp, &to_gt, pred.w) / bp.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub dice: f64,
    pub iou: f64,
    pub accuracy: f64,
    /// `None` when undefined (a boundary is empty).
    pub assd: Option<f64>,
    pub vacuous: bool,
}

impl MetricsReport {
    pub fn compute(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        let c = confusion(pred, gt)?;
        Ok(Self {
            dice: c.dice(),
            iou: c.iou(),
            accuracy: c.accuracy(),
            assd: assd(pred, gt)?,
            vacuous: c.is_vacuous(),
        })
    }

    /// Flat `key=value` lines.
    pub fn to_text(&self) -> String {
        format!("dice={}\niou={}\naccuracy={}\nassd={}\n", self.dice, self.iou, self.accuracy, fmt_assd(self.assd))
    }

    pub const CSV_HEADER: &'static str = "iou,dice,assd,accuracy";

    pub fn to_csv_row(&self) -> String {
        format!("{:.6},{:.6},{},{:.6}", self.iou, self.dice, fmt_assd_csv(self.assd), self.accuracy)
    }
}

fn fmt_assd(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| v.to_string())
}

pub(crate) fn fmt_assd_csv(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"))
}

/// Unweighted means over samples. Samples with undefined ASSD are left out of
/// the ASSD mean and counted instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub dice: f64,
    pub iou: f64,
    pub accuracy: f64,
    pub assd: Option<f64>,
    pub assd_undefined: usize,
    pub samples: usize,
}

impl Aggregate {
    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a MetricsReport>) -> Option<Self> {
        let (mut dice, mut iou, mut acc, mut assd_sum) = (0.0, 0.0, 0.0, 0.0);
        let (mut n, mut defined, mut undefined) = (0usize, 0usize, 0usize);
        for r in reports {
            dice += r.dice;
            iou += r.iou;
            acc += r.accuracy;
            match r.assd {
                Some(d) => {
                    assd_sum += d;
                    defined += 1;
                }
                None => undefined += 1,
            }
            n += 1;
        }
        (n > 0).then(|| Self {
            dice: dice / n as f64,
            iou: iou / n as f64,
            accuracy: acc / n as f64,
            assd: (defined > 0).then(|| assd_sum / defined as f64),
            assd_undefined: undefined,
            samples: n,
        })
    }

    pub fn to_csv_row(&self) -> String {
        format!("{:.6},{:.6},{},{:.6}", self.iou, self.dice, fmt_assd_csv(self.assd), self.accuracy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(h: usize, w: usize, y0: usize, x0: usize, side: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |y, x| (y0..y0 + side).contains(&y) && (x0..x0 + side).contains(&x))
    }

    #[test]
    fn confusion_basics() {
        let m = square(6, 6, 1, 1, 3);
        let c = confusion(&m, &m).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (9, 0, 0, 27));
        let all = BinaryMask::from_fn(4, 5, |_, _| true);
        let none = BinaryMask::empty(4, 5);
        let c = confusion(&all, &none).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (0, 20, 0, 0));
        assert!(confusion(&all, &m).is_err());
    }

    #[test]
    fn dice_iou_worked_example() {
        let c = ConfusionCounts { tp: 2, fp: 1, fn_: 1, tn: 0 };
        assert!((c.dice() - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(c.iou(), 0.5);
        assert!((c.dice() - 2.0 * 0.5 / 1.5).abs() < 1e-15);
    }

    #[test]
    fn perfect_disjoint_and_vacuous() {
        let a = square(8, 8, 0, 0, 3);
        let b = square(8, 8, 5, 5, 3);
        let c = confusion(&a, &a).unwrap();
        assert_eq!((c.dice(), c.iou(), c.accuracy()), (1.0, 1.0, 1.0));
        let c = confusion(&a, &b).unwrap();
        assert_eq!((c.dice(), c.iou()), (0.0, 0.0));
        let e = BinaryMask::empty(8, 8);
        let c = confusion(&e, &e).unwrap();
        assert!(c.is_vacuous());
        assert_eq!(c.dice(), 1.0);
        let inv = BinaryMask::from_fn(8, 8, |y, x| !a.get(y, x));
        assert_eq!(confusion(&inv, &a).unwrap().accuracy(), 0.0);
    }

    #[test]
    fn boundary_cases() {
        let single = BinaryMask::from_fn(5, 5, |y, x| (y, x) == (2, 3));
        assert_eq!(boundary(&single), vec![(2, 3)]);
        let sq = square(8, 8, 2, 2, 4);
        let b = boundary(&sq);
        assert_eq!(b.len(), 12);
        assert!(!b.contains(&(3, 3)) && !b.contains(&(4, 4)));
        assert!(boundary(&BinaryMask::empty(4, 4)).is_empty());
        // the image border counts as background
        let full = BinaryMask::from_fn(3, 3, |_, _| true);
        assert_eq!(boundary(&full).len(), 8);
    }

    #[test]
    fn assd_simple_cases() {
        let a = BinaryMask::from_fn(5, 8, |y, x| (y, x) == (2, 1));
        let b = BinaryMask::from_fn(5, 8, |y, x| (y, x) == (2, 4));
        assert_eq!(assd(&a, &b).unwrap(), Some(3.0));
        let sq = square(10, 10, 3, 3, 4);
        assert_eq!(assd(&sq, &sq).unwrap(), Some(0.0));
        assert_eq!(assd(&sq, &BinaryMask::empty(10, 10)).unwrap(), None);
    }

    #[test]
    fn directed_differs_from_symmetric() {
        // one small blob in prediction, ground truth has an extra far blob
        let pred = BinaryMask::from_fn(10, 10, |y, x| (y, x) == (1, 1));
        let gt = BinaryMask::from_fn(10, 10, |y, x| (y, x) == (1, 1) || (y, x) == (1, 9));
        assert_eq!(assd_directed(&pred, &gt).unwrap(), Some(0.0));
        assert_eq!(assd(&pred, &gt).unwrap(), Some(8.0 / 3.0));
    }

    #[test]
    fn logits_threshold() {
        let t = Tensor::<f32>::from_f64([1, 1, 1, 3], &[-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(BinaryMask::from_logits(&t, 0.5).bits(), &[false, false, true]);
    }

    #[test]
    fn aggregate_skips_undefined_assd() {
        let r1 = MetricsReport { dice: 1.0, iou: 1.0, accuracy: 1.0, assd: Some(2.0), vacuous: false };
        let r2 = MetricsReport { dice: 0.0, iou: 0.0, accuracy: 0.5, assd: None, vacuous: false };
        let a = Aggregate::from_reports([&r1, &r2]).unwrap();
        assert_eq!((a.dice, a.accuracy, a.assd, a.assd_undefined), (0.5, 0.75, Some(2.0), 1));
        assert!(Aggregate::from_reports([]).is_none());
    }
}
