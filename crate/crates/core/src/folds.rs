//! Image-level fold assignment that balances per-class patch counts.
//!
//! Images are placed one at a time. Each placement goes to the fold that
//! minimizes the summed per-class population standard deviation of patch
//! counts across folds. Whole images move together, so the patches of an
//! image always share its fold.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NUM_CLASSES;
use crate::patch::ClassCounts;

/// Per-class patch counts `l_{n,c}` of one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePatchCounts {
    pub image_id: String,
    pub counts: ClassCounts,
}

impl ImagePatchCounts {
    pub fn new(image_id: impl Into<String>, counts: ClassCounts) -> Self {
        Self {
            image_id: image_id.into(),
            counts,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

/// Relative slack under which two placement costs count as tied.
const TIE_EPS: f64 = 1e-12;

/// Per-fold per-class totals, one row per fold.
pub type Ledger = Vec<[u64; NUM_CLASSES]>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub per_class_sd: [f64; NUM_CLASSES],
    pub total_sd: f64,
}

/// Population standard deviation of each class column across folds, and
/// their sum.
///
/// Uses the exact integer identity `Σ(L − L̄)² · K = K·ΣL² − (ΣL)²`, so the
/// result is independent of fold order.
pub fn cost(ledger: &[[u64; NUM_CLASSES]]) -> CostReport {
    let k = ledger.len() as u128;
    let mut per_class_sd = [0.0; NUM_CLASSES];
    if k > 0 {
        for (c, sd) in per_class_sd.iter_mut().enumerate() {
            let (mut sum, mut sq) = (0u128, 0u128);
            for row in ledger {
                let v = u128::from(row[c]);
                sum += v;
                sq += v * v;
            }
            let num = k * sq - sum * sum;
            *sd = (num as f64).sqrt() / k as f64;
        }
    }
    CostReport {
        per_class_sd,
        total_sd: per_class_sd.iter().sum(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldState {
    k: usize,
    ledger: Ledger,
    images_per_fold: Vec<usize>,
    /// `(image_id, fold)` in placement order.
    assignment: Vec<(String, usize)>,
    assigned: HashSet<String>,
}

impl FoldState {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::BadK(k));
        }
        Ok(Self {
            k,
            ledger: vec![[0; NUM_CLASSES]; k],
            images_per_fold: vec![0; k],
            assignment: Vec::new(),
            assigned: HashSet::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn images_per_fold(&self) -> &[usize] {
        &self.images_per_fold
    }

    pub fn assignment(&self) -> &[(String, usize)] {
        &self.assignment
    }

    /// Number of placements so far.
    pub fn step(&self) -> usize {
        self.assignment.len()
    }

    /// Cost of the ledger after adding `img` to `fold`.
    pub fn placement_cost(&self, img: &ImagePatchCounts, fold: usize) -> CostReport {
        let mut ledger = self.ledger.clone();
        add_counts(&mut ledger[fold], &img.counts);
        cost(&ledger)
    }

    /// Picks the fold for `img` without mutating the state.
    ///
    /// Minimal total cost wins; ties (equal up to summation rounding) go to
    /// the fold holding the fewest images, then to the lowest index.
    pub fn choose_fold(&self, img: &ImagePatchCounts) -> Result<(usize, CostReport)> {
        if self.assigned.contains(&img.image_id) {
            return Err(Error::AlreadyAssigned(img.image_id.clone()));
        }
        let mut best: Option<(usize, CostReport)> = None;
        for fold in 0..self.k {
            let c = self.placement_cost(img, fold);
            let better = match &best {
                None => true,
                Some((bf, bc)) => {
                    let eps = TIE_EPS * bc.total_sd.max(1.0);
                    c.total_sd < bc.total_sd - eps
                        || ((c.total_sd - bc.total_sd).abs() <= eps
                            && self.images_per_fold[fold] < self.images_per_fold[*bf])
                }
            };
            if better {
                best = Some((fold, c));
            }
        }
        Ok(best.expect("k >= 2"))
    }

    pub fn assign_in_place(&mut self, img: &ImagePatchCounts) -> Result<(usize, CostReport)> {
        let (fold, report) = self.choose_fold(img)?;
        add_counts(&mut self.ledger[fold], &img.counts);
        self.images_per_fold[fold] += 1;
        self.assignment.push((img.image_id.clone(), fold));
        self.assigned.insert(img.image_id.clone());
        Ok((fold, report))
    }

    /// One greedy step, returning the chosen fold and the successor state.
    pub fn assign_image(&self, img: &ImagePatchCounts) -> Result<(usize, FoldState, CostReport)> {
        let mut next = self.clone();
        let (fold, report) = next.assign_in_place(img)?;
        Ok((fold, next, report))
    }

    pub fn cost(&self) -> CostReport {
        cost(&self.ledger)
    }
}

fn add_counts(row: &mut [u64; NUM_CLASSES], counts: &ClassCounts) {
    for (r, &c) in row.iter_mut().zip(counts) {
        *r += u64::from(c);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageOrder {
    /// Largest total patch count first, ties by image id.
    #[default]
    DescendingTotal,
    /// Input order.
    Given,
}

impl std::str::FromStr for ImageOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "descending" | "descending_total" => Ok(ImageOrder::DescendingTotal),
            "given" => Ok(ImageOrder::Given),
            _ => Err(Error::InvalidArgument(format!(
                "unknown image order `{s}` (expected `descending` or `given`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    /// `(image_id, fold)` in input order.
    pub folds: Vec<(String, usize)>,
    pub ledger: Ledger,
    pub images_per_fold: Vec<usize>,
    pub cost: CostReport,
}

impl FoldAssignment {
    pub fn fold_of(&self, image_id: &str) -> Option<usize> {
        self.folds.iter().find(|(id, _)| id == image_id).map(|(_, f)| *f)
    }
}

/// Processing order used by [`balance_folds`].
pub fn processing_order(images: &[ImagePatchCounts], order: ImageOrder) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..images.len()).collect();
    if order == ImageOrder::DescendingTotal {
        idx.sort_by(|&a, &b| {
            images[b]
                .total()
                .cmp(&images[a].total())
                .then_with(|| images[a].image_id.cmp(&images[b].image_id))
        });
    }
    idx
}

pub fn balance_folds(images: &[ImagePatchCounts], k: usize, order: ImageOrder) -> Result<FoldAssignment> {
    let mut state = FoldState::new(k)?;
    if images.is_empty() {
        return Err(Error::EmptyInput("no images to assign".into()));
    }
    let mut seen = HashSet::new();
    for img in images {
        if !seen.insert(img.image_id.as_str()) {
            return Err(Error::DuplicateId(img.image_id.clone()));
        }
    }
    let mut fold_of = vec![0; images.len()];
    for i in processing_order(images, order) {
        let (fold, _) = state.assign_in_place(&images[i])?;
        fold_of[i] = fold;
    }
    Ok(FoldAssignment {
        k,
        folds: images
            .iter()
            .zip(fold_of)
            .map(|(img, f)| (img.image_id.clone(), f))
            .collect(),
        cost: state.cost(),
        ledger: state.ledger,
        images_per_fold: state.images_per_fold,
    })
}

const COUNTS_HEADER: &str = "image_id,c1,c2,c3,c4,c5,c6,c7";

pub fn write_counts_csv(path: &Path, images: &[ImagePatchCounts]) -> Result<()> {
    let mut out = String::from(COUNTS_HEADER);
    out.push('\n');
    for img in images {
        out.push_str(&img.image_id);
        for c in img.counts {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn data_lines(path: &Path) -> Result<impl Iterator<Item = (usize, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<(usize, String)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect();
    Ok(lines.into_iter())
}

pub fn read_counts_csv(path: &Path) -> Result<Vec<ImagePatchCounts>> {
    let perr = |line, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = data_lines(path)?;
    match lines.next() {
        Some((_, h)) if h == COUNTS_HEADER => {}
        Some((n, _)) => return Err(perr(n, format!("expected header `{COUNTS_HEADER}`"))),
        None => return Err(perr(1, "missing header".into())),
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != NUM_CLASSES + 1 {
            return Err(perr(n, format!("expected {} fields, found {}", NUM_CLASSES + 1, fields.len())));
        }
        let mut counts = [0u32; NUM_CLASSES];
        for (c, f) in counts.iter_mut().zip(&fields[1..]) {
            *c = f.parse().map_err(|_| perr(n, format!("invalid count `{f}`")))?;
        }
        out.push(ImagePatchCounts::new(fields[0], counts));
    }
    Ok(out)
}

/// Writes `image_id,fold` rows followed by a `#`-prefixed summary of the
/// per-class and total standard deviations and per-fold totals.
pub fn write_folds_csv(path: &Path, assignment: &FoldAssignment) -> Result<()> {
    std::fs::write(path, render_folds_csv(assignment)).map_err(|e| Error::io(path, e))
}

pub fn render_folds_csv(a: &FoldAssignment) -> String {
    let mut out = String::from("image_id,fold\n");
    for (id, f) in &a.folds {
        writeln!(out, "{id},{f}").unwrap();
    }
    out.push_str("# summary\n# class,sigma\n");
    for (c, sd) in a.cost.per_class_sd.iter().enumerate() {
        writeln!(out, "# {},{sd}", c + 1).unwrap();
    }
    writeln!(out, "# total,{}", a.cost.total_sd).unwrap();
    out.push_str("# fold,images,c1,c2,c3,c4,c5,c6,c7\n");
    for (f, row) in a.ledger.iter().enumerate() {
        write!(out, "# {f},{}", a.images_per_fold[f]).unwrap();
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Reads the `image_id,fold` rows of a folds CSV, ignoring the summary.
pub fn read_folds_csv(path: &Path) -> Result<Vec<(String, usize)>> {
    let perr = |line, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = data_lines(path)?;
    match lines.next() {
        Some((_, h)) if h == "image_id,fold" => {}
        Some((n, _)) => return Err(perr(n, "expected header `image_id,fold`".into())),
        None => return Err(perr(1, "missing header".into())),
    }
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in lines {
        let (id, fold) = line
            .split_once(',')
            .ok_or_else(|| perr(n, "expected `image_id,fold`".into()))?;
        let fold: usize = fold
            .trim()
            .parse()
            .map_err(|_| perr(n, format!("invalid fold `{fold}`")))?;
        let id = id.trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        out.push((id, fold));
    }
    Ok(out)
}
