//! Dataset loading and preprocessing: Iris CSV, MNIST IDX, CIFAR-10 binary,
//! standardization, class filtering and stratified splits.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + 3 * 1024;
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Labeled samples with a uniform feature width. `labels[i]` indexes
/// `class_labels`, which keeps the original label names.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_labels: Vec<String>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        class_labels: Vec<String>,
    ) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} feature rows for {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(w) = features.first().map(Vec::len) {
            if let Some(row) = features.iter().position(|f| f.len() != w) {
                return Err(Error::Data(format!("sample {row} has width {} not {w}", features[row].len())));
            }
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_labels.len()) {
            return Err(Error::Data(format!(
                "label {l} outside {} classes",
                class_labels.len()
            )));
        }
        Ok(Dataset {
            name: name.into(),
            features,
            labels,
            class_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn class_count(&self) -> usize {
        self.class_labels.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.class_count()];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_labels: self.class_labels.clone(),
        }
    }

    pub fn map_features(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Dataset> {
        Dataset::new(
            self.name.clone(),
            self.features.iter().map(|x| f(x)).collect(),
            self.labels.clone(),
            self.class_labels.clone(),
        )
    }

    fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.class_count()];
        for (i, &l) in self.labels.iter().enumerate() {
            by[l].push(i);
        }
        by
    }
}

/// Iris CSV: four numeric columns then a class name. Class names are
/// indexed in sorted order.
pub fn load_iris(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_iris(&fs::read_to_string(path)?)
}

pub fn parse_iris(text: &str) -> Result<Dataset> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 5 {
            return Err(Error::Parse {
                line: n + 1,
                message: format!("expected 5 columns, found {}", cols.len()),
            });
        }
        let features = cols[..4]
            .iter()
            .map(|c| {
                c.parse::<f64>().map_err(|_| Error::Parse {
                    line: n + 1,
                    message: format!("not a number: {c:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((features, cols[4].to_string()));
    }
    let names: Vec<String> = rows
        .iter()
        .map(|(_, c)| c.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let labels = rows
        .iter()
        .map(|(_, c)| names.binary_search(c).expect("collected name"))
        .collect();
    Dataset::new("iris", rows.into_iter().map(|(f, _)| f).collect(), labels, names)
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Data(format!("{what}: truncated header")))
}

/// MNIST IDX image and label files; pixels scaled to `[0, 1]`, classes are
/// the digits `0..=9`.
pub fn load_mnist(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    parse_mnist(&fs::read(images)?, &fs::read(labels)?)
}

pub fn parse_mnist(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = be_u32(images, 0, "images")?;
    if magic != IDX_IMAGES {
        return Err(Error::Data(format!("unrecognized IDX magic 0x{magic:08x} in image file")));
    }
    let magic = be_u32(labels, 0, "labels")?;
    if magic != IDX_LABELS {
        return Err(Error::Data(format!("unrecognized IDX magic 0x{magic:08x} in label file")));
    }
    let n = be_u32(images, 4, "images")? as usize;
    let rows = be_u32(images, 8, "images")? as usize;
    let cols = be_u32(images, 12, "images")? as usize;
    let nl = be_u32(labels, 4, "labels")? as usize;
    if n != nl {
        return Err(Error::Data(format!("{n} images but {nl} labels")));
    }
    let px = rows * cols;
    let pixels = &images[16..];
    if pixels.len() < n * px {
        return Err(Error::Data(format!(
            "image file truncated: {} of {} pixel bytes",
            pixels.len(),
            n * px
        )));
    }
    let digits = &labels[8..];
    if digits.len() < n {
        return Err(Error::Data(format!("label file truncated: {} of {n} labels", digits.len())));
    }
    if let Some(&d) = digits[..n].iter().find(|&&d| d > 9) {
        return Err(Error::Data(format!("label {d} is not a digit")));
    }
    let features = pixels[..n * px]
        .chunks(px)
        .map(|img| img.iter().map(|&p| p as f64 / 255.0).collect())
        .collect();
    Dataset::new(
        "mnist",
        features,
        digits[..n].iter().map(|&d| d as usize).collect(),
        (0..10).map(|d| d.to_string()).collect(),
    )
}

/// CIFAR-10 binary batches: records of one label byte and 3072 channel-major
/// pixel bytes. Features are the 3072 bytes scaled to `[0, 1]`.
pub fn load_cifar10<P: AsRef<Path>>(batches: &[P]) -> Result<Dataset> {
    let mut all = Vec::new();
    for p in batches {
        all.push(fs::read(p)?);
    }
    parse_cifar10(&all.iter().map(Vec::as_slice).collect::<Vec<_>>())
}

pub fn parse_cifar10(batches: &[&[u8]]) -> Result<Dataset> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (b, bytes) in batches.iter().enumerate() {
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::Data(format!(
                "batch {b}: length {} is not a multiple of {CIFAR_RECORD}",
                bytes.len()
            )));
        }
        for rec in bytes.chunks(CIFAR_RECORD) {
            if rec[0] > 9 {
                return Err(Error::Data(format!("batch {b}: label {} out of range", rec[0])));
            }
            labels.push(rec[0] as usize);
            features.push(rec[1..].iter().map(|&p| p as f64 / 255.0).collect());
        }
    }
    Dataset::new(
        "cifar10",
        features,
        labels,
        (0..10).map(|d| d.to_string()).collect(),
    )
}

/// Luma grayscale of a 32x32 channel-major RGB image, then bilinear resize to
/// 28x28 (pixel-centre alignment).
pub fn to_gray28(rgb: &[f64]) -> Vec<f64> {
    assert_eq!(rgb.len(), 3072, "expected a 32x32x3 image");
    let gray: Vec<f64> = (0..1024)
        .map(|i| LUMA[0] * rgb[i] + LUMA[1] * rgb[1024 + i] + LUMA[2] * rgb[2048 + i])
        .collect();
    let scale = 32.0 / 28.0;
    let coord = |d: usize| -> (usize, usize, f64) {
        let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, 31.0);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(31);
        (lo, hi, s - lo as f64)
    };
    let mut out = Vec::with_capacity(784);
    for y in 0..28 {
        let (y0, y1, fy) = coord(y);
        for x in 0..28 {
            let (x0, x1, fx) = coord(x);
            let top = gray[y0 * 32 + x0] * (1.0 - fx) + gray[y0 * 32 + x1] * fx;
            let bottom = gray[y1 * 32 + x0] * (1.0 - fx) + gray[y1 * 32 + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Per-feature affine map fitted on a training set.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation, or 1 for constant features.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("cannot standardize an empty dataset".into()));
        }
        let n = train.len() as f64;
        let w = train.width();
        let mut mean = vec![0.0; w];
        for x in &train.features {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; w];
        for x in &train.features {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn transform(&self, d: &Dataset) -> Result<Dataset> {
        if d.width() != self.mean.len() && !d.is_empty() {
            return Err(Error::Data(format!(
                "standardizer fitted on width {}, dataset has width {}",
                self.mean.len(),
                d.width()
            )));
        }
        d.map_features(|x| self.apply(x))
    }
}

/// Fits on `train` and applies the same map to every dataset.
pub fn standardize(train: &Dataset, others: &[&Dataset]) -> Result<(Standardizer, Dataset, Vec<Dataset>)> {
    let s = Standardizer::fit(train)?;
    let t = s.transform(train)?;
    let o = others.iter().map(|d| s.transform(d)).collect::<Result<_>>()?;
    Ok((s, t, o))
}

/// Keeps the listed class indices and renumbers them `0..k` in `keep` order.
pub fn filter_classes(d: &Dataset, keep: &[usize]) -> Result<Dataset> {
    let mut map = vec![None; d.class_count()];
    for (new, &old) in keep.iter().enumerate() {
        if old >= d.class_count() {
            return Err(Error::Data(format!(
                "unknown class {old}; dataset has {} classes",
                d.class_count()
            )));
        }
        if map[old].is_some() {
            return Err(Error::Data(format!("class {old} listed twice")));
        }
        map[old] = Some(new);
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (x, &l) in d.features.iter().zip(&d.labels) {
        if let Some(new) = map[l] {
            features.push(x.clone());
            labels.push(new);
        }
    }
    Dataset::new(
        d.name.clone(),
        features,
        labels,
        keep.iter().map(|&k| d.class_labels[k].clone()).collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub folds: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            folds: 5,
            seed: 0,
        }
    }
}

fn shuffled_classes(d: &Dataset, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = stream(seed, Stream::Split);
    let mut by = d.indices_by_class();
    for c in &mut by {
        c.shuffle(&mut rng);
    }
    by
}

/// Stratified train/test split; each class contributes
/// `round(fraction * n_class)` training samples.
pub fn train_test_split(d: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {} must lie in (0, 1)",
            spec.train_fraction
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in shuffled_classes(d, spec.seed) {
        let k = (spec.train_fraction * c.len() as f64).round() as usize;
        train.extend_from_slice(&c[..k]);
        test.extend_from_slice(&c[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((d.subset(&train), d.subset(&test)))
}

/// Stratified subsample of `train_n + test_n` samples split into two sets,
/// each allocating per-class counts proportionally (largest remainder).
pub fn stratified_subset(d: &Dataset, train_n: usize, test_n: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if train_n + test_n > d.len() {
        return Err(Error::Data(format!(
            "requested {} samples from a dataset of {}",
            train_n + test_n,
            d.len()
        )));
    }
    let by = shuffled_classes(d, seed);
    let sizes: Vec<usize> = by.iter().map(Vec::len).collect();
    let test_quota = apportion(&sizes, test_n);
    let rest: Vec<usize> = sizes.iter().zip(&test_quota).map(|(s, t)| s - t).collect();
    let train_quota = apportion(&rest, train_n);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for ((c, &te), &tr) in by.iter().zip(&test_quota).zip(&train_quota) {
        test.extend_from_slice(&c[..te]);
        train.extend_from_slice(&c[te..te + tr]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((d.subset(&train), d.subset(&test)))
}

/// Splits `total` across buckets proportionally to `sizes`, never exceeding a
/// bucket.
fn apportion(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let exact: Vec<f64> = sizes.iter().map(|&s| s as f64 * total as f64 / n as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut left = total - out.iter().sum::<usize>();
    for &i in order.iter().cycle().take(sizes.len() * 2) {
        if left == 0 {
            break;
        }
        if out[i] < sizes[i] {
            out[i] += 1;
            left -= 1;
        }
    }
    out
}

/// Stratified k-fold partition. Returns `(train, test)` per fold; the test
/// folds are disjoint and cover the dataset.
pub fn k_fold(d: &Dataset, spec: &SplitSpec) -> Result<Vec<(Dataset, Dataset)>> {
    if spec.folds < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }
    let by = shuffled_classes(d, spec.seed);
    if let Some(c) = by.iter().position(|c| !c.is_empty() && c.len() < spec.folds) {
        return Err(Error::Data(format!(
            "class {c} has {} samples, fewer than {} folds",
            by[c].len(),
            spec.folds
        )));
    }
    let mut folds = vec![Vec::new(); spec.folds];
    let mut next = 0;
    for c in &by {
        for &i in c {
            folds[next].push(i);
            next = (next + 1) % spec.folds;
        }
    }
    Ok((0..spec.folds)
        .map(|k| {
            let mut test = folds[k].clone();
            let mut train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .flat_map(|(_, f)| f.iter().copied())
                .collect();
            test.sort_unstable();
            train.sort_unstable();
            (d.subset(&train), d.subset(&test))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(counts: &[usize]) -> Dataset {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for i in 0..n {
                features.push(vec![c as f64, i as f64]);
                labels.push(c);
            }
        }
        let names = (0..counts.len()).map(|c| format!("c{c}")).collect();
        Dataset::new("toy", features, labels, names).unwrap()
    }

    #[test]
    fn iris_rows_and_errors() {
        let d = parse_iris("5.1,3.5,1.4,0.2,Iris-setosa\n\n6.3,3.3,6.0,2.5,Iris-virginica\n").unwrap();
        assert_eq!(d.features[0], vec![5.1, 3.5, 1.4, 0.2]);
        assert_eq!(d.labels, vec![0, 1]);
        let e = parse_iris("5.1,3.5,1.4,0.2,Iris-setosa\n5.1,3.5,Iris-setosa\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let e = parse_iris("5.1,x,1.4,0.2,Iris-setosa\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
    }

    fn idx(magic: u32, dims: &[u32], body: &[u8]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend(d.to_be_bytes());
        }
        v.extend_from_slice(body);
        v
    }

    #[test]
    fn mnist_round_trip_and_errors() {
        let mut px = vec![0u8; 784];
        px.extend((0..784).map(|i| (i % 256) as u8));
        let images = idx(IDX_IMAGES, &[2, 28, 28], &px);
        let labels = idx(IDX_LABELS, &[2], &[3, 6]);
        let d = parse_mnist(&images, &labels).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d.features[0].iter().all(|&x| x == 0.0));
        assert_eq!(d.features[1][255], 1.0);
        assert_eq!(d.labels, vec![3, 6]);

        let bad = idx(0x0000_0802, &[2, 28, 28], &px);
        let e = parse_mnist(&bad, &labels).unwrap_err().to_string();
        assert!(e.contains("unrecognized IDX magic"), "{e}");
        let short = idx(IDX_LABELS, &[3], &[3, 6, 1]);
        assert!(parse_mnist(&images, &short).is_err());
        assert!(parse_mnist(&images[..1000], &labels).is_err());
    }

    #[test]
    fn cifar_gray_and_length() {
        let mut rec = vec![4u8];
        rec.extend(std::iter::repeat_n(51u8, 3072));
        let d = parse_cifar10(&[&rec]).unwrap();
        assert_eq!(d.labels, vec![4]);
        let g = to_gray28(&d.features[0]);
        assert_eq!(g.len(), 784);
        assert!(g.iter().all(|&p| (p - 0.2).abs() < 1e-12));
        assert!(parse_cifar10(&[&rec[..3000]]).is_err());
    }

    #[test]
    fn standardize_basics() {
        let d = Dataset::new("s", vec![vec![1.0, 5.0], vec![3.0, 5.0]], vec![0, 0], vec!["a".into()]).unwrap();
        let (s, t, _) = standardize(&d, &[]).unwrap();
        assert_eq!(t.features, vec![vec![-1.0, 0.0], vec![1.0, 0.0]]);
        assert_eq!(s.scale, vec![1.0, 1.0]);
    }

    #[test]
    fn filter_reindexes() {
        let d = toy(&[2, 3, 4]);
        let f = filter_classes(&d, &[2, 0]).unwrap();
        assert_eq!(f.class_counts(), vec![4, 2]);
        assert_eq!(f.class_labels, vec!["c2", "c0"]);
        assert_eq!(f.features[0], vec![0.0, 0.0]);
        assert_eq!(f.labels[0], 1);
        assert!(filter_classes(&d, &[42]).is_err());
        assert!(filter_classes(&d, &[1, 1]).is_err());
    }

    #[test]
    fn splits() {
        let d = toy(&[50, 50]);
        let (tr, te) = train_test_split(&d, &SplitSpec { seed: 3, ..Default::default() }).unwrap();
        assert_eq!((tr.class_counts(), te.class_counts()), (vec![40, 40], vec![10, 10]));
        let again = train_test_split(&d, &SplitSpec { seed: 3, ..Default::default() }).unwrap();
        assert_eq!(again.0, tr);

        let folds = k_fold(&d, &SplitSpec::default()).unwrap();
        assert_eq!(folds.len(), 5);
        for (tr, te) in &folds {
            assert_eq!(te.class_counts(), vec![10, 10]);
            assert_eq!(tr.len(), 80);
        }
        assert!(k_fold(&toy(&[3, 10]), &SplitSpec::default()).is_err());

        let (tr, te) = stratified_subset(&toy(&[60, 40]), 50, 20, 1).unwrap();
        assert_eq!(te.class_counts(), vec![12, 8]);
        assert_eq!(tr.class_counts(), vec![30, 20]);
        assert!(stratified_subset(&d, 90, 20, 1).is_err());
    }
}
