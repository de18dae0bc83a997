use nalgebra::{DMatrix, DVector};

use super::panel::PanelRow;

/// Column layout of the saturated triple-difference design.
///
/// Columns: `[1, L (m), Y, P, YL (m), PL (m), YP, YPL (m)]` where
/// `m = n_languages - 1`, for `4 · n_languages` columns in total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DesignLayout {
    pub n_languages: usize,
    pub baseline: usize,
}

impl DesignLayout {
    pub fn new(n_languages: usize, baseline: usize) -> Self {
        assert!(baseline < n_languages, "baseline language out of range");
        DesignLayout { n_languages, baseline }
    }

    fn m(&self) -> usize {
        self.n_languages - 1
    }

    pub fn n_columns(&self) -> usize {
        4 * self.n_languages
    }

    /// Indicator slot of a language, `None` for the reference language.
    pub fn slot(&self, language: usize) -> Option<usize> {
        match language.cmp(&self.baseline) {
            std::cmp::Ordering::Less => Some(language),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(language - 1),
        }
    }

    pub const INTERCEPT: usize = 0;

    pub fn l(&self, slot: usize) -> usize {
        1 + slot
    }
    pub fn y(&self) -> usize {
        1 + self.m()
    }
    pub fn p(&self) -> usize {
        2 + self.m()
    }
    pub fn yl(&self, slot: usize) -> usize {
        3 + self.m() + slot
    }
    pub fn pl(&self, slot: usize) -> usize {
        3 + 2 * self.m() + slot
    }
    pub fn yp(&self) -> usize {
        3 + 3 * self.m()
    }
    pub fn ypl(&self, slot: usize) -> usize {
        4 + 3 * self.m() + slot
    }

    /// Fills one design row.
    pub fn encode(&self, row: &PanelRow, out: &mut [f64]) {
        out.fill(0.0);
        let (y, p) = (f64::from(u8::from(row.y)), f64::from(u8::from(row.p)));
        out[Self::INTERCEPT] = 1.0;
        out[self.y()] = y;
        out[self.p()] = p;
        out[self.yp()] = y * p;
        if let Some(s) = self.slot(row.language_index) {
            out[self.l(s)] = 1.0;
            out[self.yl(s)] = y;
            out[self.pl(s)] = p;
            out[self.ypl(s)] = y * p;
        }
    }

    pub fn column_names(&self, languages: &[String]) -> Vec<String> {
        let others: Vec<&String> = languages
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.baseline)
            .map(|(_, l)| l)
            .collect();
        let mut names = vec!["const".to_owned()];
        names.extend(others.iter().map(|l| format!("L[{l}]")));
        names.push("Y".into());
        names.push("P".into());
        names.extend(others.iter().map(|l| format!("YL[{l}]")));
        names.extend(others.iter().map(|l| format!("PL[{l}]")));
        names.push("YP".into());
        names.extend(others.iter().map(|l| format!("YPL[{l}]")));
        names
    }
}

#[derive(Debug, Clone)]
pub struct Design {
    pub layout: DesignLayout,
    pub x: DMatrix<f64>,
    pub response: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DesignError {
    #[error("rank deficient design: no observations for language {language}, Y={y}, P={p}")]
    EmptyCell { language: usize, y: u8, p: u8 },
    #[error("row references language {0}, outside the configured languages")]
    LanguageOutOfRange(usize),
}

/// Encodes panel rows as a design matrix and response vector.
///
/// Every (language, Y, P) cell must contain at least one row, otherwise the
/// design cannot have full column rank.
pub fn build_design(rows: &[PanelRow], n_languages: usize, baseline: usize) -> Result<Design, DesignError> {
    let layout = DesignLayout::new(n_languages, baseline);
    let mut cells = vec![0usize; n_languages * 4];
    for r in rows {
        if r.language_index >= n_languages {
            return Err(DesignError::LanguageOutOfRange(r.language_index));
        }
        cells[r.language_index * 4 + usize::from(r.y) * 2 + usize::from(r.p)] += 1;
    }
    if let Some(i) = cells.iter().position(|&c| c == 0) {
        return Err(DesignError::EmptyCell {
            language: i / 4,
            y: ((i % 4) / 2) as u8,
            p: (i % 2) as u8,
        });
    }

    let k = layout.n_columns();
    let mut x = DMatrix::zeros(rows.len(), k);
    let mut buf = vec![0.0; k];
    for (i, r) in rows.iter().enumerate() {
        layout.encode(r, &mut buf);
        for (j, v) in buf.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    let response = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.log_value));
    Ok(Design { layout, x, response })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn row(l: usize, y: bool, p: bool) -> PanelRow {
        PanelRow {
            language_index: l,
            date: NaiveDate::from_ymd_opt(2020, 3, 1).unwrap(),
            y,
            p,
            log_value: 1.0,
        }
    }

    fn all_cells(n: usize) -> Vec<PanelRow> {
        let mut rows = Vec::new();
        for l in 0..n {
            for y in [false, true] {
                for p in [false, true] {
                    rows.push(row(l, y, p));
                }
            }
        }
        rows
    }

    #[test]
    fn column_counts() {
        assert_eq!(build_design(&all_cells(12), 12, 10).unwrap().x.ncols(), 48);
        assert_eq!(build_design(&all_cells(2), 2, 0).unwrap().x.ncols(), 8);
    }

    #[test]
    fn baseline_row_encoding() {
        let layout = DesignLayout::new(12, 10);
        let mut buf = vec![0.0; 48];
        layout.encode(&row(10, true, true), &mut buf);
        let ones: Vec<usize> = (0..48).filter(|&j| buf[j] != 0.0).collect();
        assert_eq!(ones, vec![0, layout.y(), layout.p(), layout.yp()]);
        assert_eq!((layout.y(), layout.p(), layout.yp()), (12, 13, 36));

        layout.encode(&row(11, true, false), &mut buf);
        let slot = layout.slot(11).unwrap();
        assert_eq!(slot, 10);
        let ones: Vec<usize> = (0..48).filter(|&j| buf[j] != 0.0).collect();
        assert_eq!(ones, vec![0, layout.l(slot), layout.y(), layout.yl(slot)]);
        assert_eq!(layout.ypl(slot), 47);
    }

    #[test]
    fn empty_cell_is_named() {
        let mut rows = all_cells(3);
        rows.retain(|r| !(r.language_index == 2 && r.y && !r.p));
        assert_eq!(
            build_design(&rows, 3, 0).unwrap_err(),
            DesignError::EmptyCell { language: 2, y: 1, p: 0 }
        );
    }

    #[test]
    fn names_follow_layout() {
        let langs: Vec<String> = ["da", "en", "fi"].iter().map(|s| s.to_string()).collect();
        let names = DesignLayout::new(3, 0).column_names(&langs);
        assert_eq!(
            names,
            ["const", "L[en]", "L[fi]", "Y", "P", "YL[en]", "YL[fi]", "PL[en]", "PL[fi]", "YP", "YPL[en]", "YPL[fi]"]
        );
    }
}
