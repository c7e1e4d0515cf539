//! Dataset ingestion and deterministic stratified partitioning.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::{substream, unit_f64};

/// An immutable table of numeric feature rows with class labels.
///
/// Class labels are kept sorted; all stratified operations iterate
/// classes in that order so their output is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_names: Vec<String>,
    features: Vec<Vec<f64>>,
    labels: Vec<String>,
    classes: Vec<String>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, rows: Vec<(Vec<f64>, String)>) -> Result<Self> {
        let mut features = Vec::with_capacity(rows.len());
        let mut labels = Vec::with_capacity(rows.len());
        for (i, (values, label)) in rows.into_iter().enumerate() {
            if values.len() != feature_names.len() {
                return Err(Error::Dataset(format!(
                    "row {i} has {} values, expected {}",
                    values.len(),
                    feature_names.len()
                )));
            }
            if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!("row {i} has non-finite value {bad}")));
            }
            features.push(values);
            labels.push(label);
        }
        let mut classes: Vec<String> = labels.clone();
        classes.sort();
        classes.dedup();
        Ok(Self { feature_names, features, labels, classes })
    }

    /// Ingests CSV with a header row: one column holds the class label,
    /// every other column must be numeric. Rows with missing or
    /// non-numeric values are rejected, reported by line number.
    pub fn from_csv(reader: impl Read, label_column: &str) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = csv
            .headers()
            .map_err(|e| Error::Dataset(format!("reading header: {e}")))?
            .clone();
        let label_idx = headers
            .iter()
            .position(|h| h == label_column)
            .ok_or_else(|| Error::Dataset(format!("no column named {label_column:?} in header")))?;
        let feature_names: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != label_idx)
            .map(|(_, h)| h.to_string())
            .collect();

        let mut rows = Vec::new();
        let mut bad_lines = Vec::new();
        for (record_idx, record) in csv.records().enumerate() {
            let line = record_idx + 2; // 1-based, after the header
            let record = record.map_err(|e| Error::Dataset(format!("line {line}: {e}")))?;
            if record.len() != headers.len() {
                bad_lines.push(format!("line {line}: {} fields, expected {}", record.len(), headers.len()));
                continue;
            }
            let mut values = Vec::with_capacity(feature_names.len());
            let mut label = String::new();
            let mut ok = true;
            for (i, field) in record.iter().enumerate() {
                if i == label_idx {
                    label = field.trim().to_string();
                    if label.is_empty() {
                        bad_lines.push(format!("line {line}: missing label"));
                        ok = false;
                    }
                    continue;
                }
                match field.trim().parse::<f64>() {
                    Ok(v) if v.is_finite() => values.push(v),
                    _ if field.trim().is_empty() => {
                        bad_lines.push(format!("line {line}: missing value in column {:?}", &headers[i]));
                        ok = false;
                    }
                    _ => {
                        bad_lines.push(format!(
                            "line {line}: non-numeric value {:?} in column {:?}",
                            field, &headers[i]
                        ));
                        ok = false;
                    }
                }
            }
            if ok {
                rows.push((values, label));
            }
        }
        if !bad_lines.is_empty() {
            return Err(Error::Dataset(format!(
                "{} rejected rows:\n  {}",
                bad_lines.len(),
                bad_lines.join("\n  ")
            )));
        }
        Self::new(feature_names, rows)
    }

    pub fn from_csv_path(path: impl AsRef<Path>, label_column: &str) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| {
            Error::Dataset(format!("opening {}: {e}", path.as_ref().display()))
        })?;
        Self::from_csv(file, label_column)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Distinct class labels, sorted.
    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn row(&self, index: usize) -> (&[f64], &str) {
        (&self.features[index], &self.labels[index])
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], &str)> {
        self.features.iter().map(|v| v.as_slice()).zip(self.labels.iter().map(|l| l.as_str()))
    }

    /// Copies the given rows (by index) into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let rows = indices
            .iter()
            .map(|&i| {
                if i >= self.len() {
                    return Err(Error::Domain(format!("row index {i} out of range")));
                }
                Ok((self.features[i].clone(), self.labels[i].clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.feature_names.clone(), rows)
    }

    fn indices_by_class(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, label) in self.labels.iter().enumerate() {
            map.entry(label.as_str()).or_default().push(i);
        }
        map
    }

    pub fn class_counts(&self) -> BTreeMap<&str, usize> {
        self.indices_by_class().into_iter().map(|(c, v)| (c, v.len())).collect()
    }
}

/// Deterministic in-place Fisher-Yates driven by the documented uniform
/// draw, so shuffles can be re-derived outside this crate.
fn shuffle(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..indices.len()).rev() {
        let j = (unit_f64(rng) * (i + 1) as f64) as usize;
        indices.swap(i, j.min(i));
    }
}

/// Largest-remainder apportionment of `total` into `fractions.len()`
/// parts; ties go to the lower index.
fn apportion(total: usize, fractions: &[f64]) -> Vec<usize> {
    let mut base: Vec<usize> = Vec::with_capacity(fractions.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(fractions.len());
    for (i, f) in fractions.iter().enumerate() {
        let exact = total as f64 * f;
        base.push(exact.floor() as usize);
        remainders.push((i, exact - exact.floor()));
    }
    let assigned: usize = base.iter().sum();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (i, _) in remainders.iter().take(total - assigned) {
        base[*i] += 1;
    }
    base
}

/// Stratified partition into `fractions.len()` disjoint datasets.
///
/// Deterministic algorithm, given `seed`:
/// 1. Global split sizes by largest remainder over `n * f_i`.
/// 2. Per-class quotas by largest remainder over `n_c * f_i`, then a
///    controlled-rounding pass that moves single rows between splits
///    within a class (augmenting chains over splits) until every split
///    hits its global size; every cell stays within one row of exact
///    proportionality throughout.
/// 3. Per class (classes in sorted order), shuffle the class's row
///    indices with the class's substream and slice contiguously by the
///    quotas, split by split.
pub fn stratified_split(dataset: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>> {
    let indices = stratified_split_indices(dataset, fractions, seed)?;
    indices.iter().map(|idx| dataset.subset(idx)).collect()
}

/// Moves units of `quotas` between columns (within rows, so row sums are
/// untouched) until column sums equal `targets`, never taking a cell
/// outside `[floor, floor + 1]` of its exact value. The matrix rounding
/// theorem guarantees a solution exists; BFS over columns finds each
/// augmenting chain deterministically.
fn fix_column_sums(quotas: &mut [Vec<usize>], floors: &[Vec<usize>], targets: &[usize]) {
    let splits = targets.len();
    let col_sum = |quotas: &[Vec<usize>], s: usize| quotas.iter().map(|row| row[s]).sum::<usize>();
    loop {
        let Some(over) = (0..splits).find(|&s| col_sum(quotas, s) > targets[s]) else {
            return;
        };
        // BFS for a chain of within-row moves ending at a deficit column.
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; splits]; // (class, from_col)
        let mut visited = vec![false; splits];
        visited[over] = true;
        let mut frontier = vec![over];
        let mut reached = None;
        'search: while let Some(from) = frontier.pop() {
            for to in 0..splits {
                if visited[to] {
                    continue;
                }
                for (c, row) in quotas.iter().enumerate() {
                    if row[from] > floors[c][from] && row[to] < floors[c][to] + 1 {
                        visited[to] = true;
                        prev[to] = Some((c, from));
                        if col_sum(quotas, to) < targets[to] {
                            reached = Some(to);
                            break 'search;
                        }
                        frontier.push(to);
                        break;
                    }
                }
            }
        }
        let mut at = reached.expect("a column rounding always exists");
        while let Some((class, from)) = prev[at] {
            quotas[class][from] -= 1;
            quotas[class][at] += 1;
            at = from;
        }
    }
}

/// Index-level form of [`stratified_split`]; each returned vector is
/// sorted ascending.
pub fn stratified_split_indices(
    dataset: &Dataset,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if fractions.len() < 2 {
        return Err(Error::Domain("need at least two fractions".into()));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("fractions must sum to 1, got {sum}")));
    }
    if fractions.iter().any(|f| *f <= 0.0) {
        return Err(Error::Domain("every fraction must be positive".into()));
    }
    let by_class = dataset.indices_by_class();
    for (class, rows) in &by_class {
        if rows.len() < fractions.len() {
            return Err(Error::Stratification(format!(
                "class {class:?} has {} rows, fewer than the {} splits",
                rows.len(),
                fractions.len()
            )));
        }
    }

    let split_sizes = apportion(dataset.len(), fractions);

    // Per-class quotas: largest remainder within each class, then fix
    // column sums to the global split sizes.
    let classes: Vec<&str> = by_class.keys().copied().collect();
    let mut quotas: Vec<Vec<usize>> = Vec::with_capacity(classes.len());
    let mut floors: Vec<Vec<usize>> = Vec::with_capacity(classes.len());
    for class in &classes {
        let n_c = by_class[class].len();
        quotas.push(apportion(n_c, fractions));
        floors.push(
            fractions.iter().map(|f| (n_c as f64 * f).floor() as usize).collect(),
        );
    }
    fix_column_sums(&mut quotas, &floors, &split_sizes);

    let mut splits: Vec<Vec<usize>> = vec![Vec::new(); fractions.len()];
    for (c, class) in classes.iter().enumerate() {
        let mut rows = by_class[class].clone();
        let mut rng = substream(seed, c as u32, 0);
        shuffle(&mut rows, &mut rng);
        let mut cursor = 0;
        for (s, quota) in quotas[c].iter().enumerate() {
            splits[s].extend_from_slice(&rows[cursor..cursor + quota]);
            cursor += quota;
        }
    }
    for split in &mut splits {
        split.sort_unstable();
    }
    Ok(splits)
}

/// K disjoint stratified folds over the dataset.
///
/// Per class (sorted order), row indices are shuffled with the class's
/// substream; the concatenated list is then dealt round-robin over folds
/// with a single running position counter, which keeps both the global
/// fold sizes and each class's per-fold counts within one of each other.
/// Remainders land on the earliest folds. Fold index lists come back
/// sorted ascending.
pub fn kfold_indices(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Domain(format!("k must be at least 2, got {k}")));
    }
    let by_class = dataset.indices_by_class();
    for (class, rows) in &by_class {
        if rows.len() < k {
            return Err(Error::Stratification(format!(
                "class {class:?} has {} rows, fewer than k = {k}",
                rows.len()
            )));
        }
    }
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut position = 0usize;
    for (c, (_, rows)) in by_class.iter().enumerate() {
        let mut rows = rows.clone();
        let mut rng = substream(seed, c as u32, 1);
        shuffle(&mut rows, &mut rng);
        for index in rows {
            folds[position % k].push(index);
            position += 1;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}
