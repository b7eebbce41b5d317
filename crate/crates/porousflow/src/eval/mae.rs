//! Region-wise mean absolute errors.
//!
//! Errors are reported per output field (velocity components, then
//! pressure) and per region: `global` over every point, `porous` and
//! `fluid` over the indicator partition, and optionally `solid-surface`
//! for cases that carry solid walls. A region with no points is reported
//! as absent rather than as a zero, so a missing porous block can never
//! masquerade as a perfect porous prediction.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::dataset::{FlowField, PointCloudCase, Units};
use crate::geometry::BoundaryTag;
use crate::textio::fmt_float;

use super::{input_err, parse_err, EvalError};

/// Membership masks for the reporting regions of one case.
///
/// `porous` and `fluid` must partition the points. The solid-surface mask
/// is optional and may overlap both: it tags wall points of
/// three-dimensional cases, where the surface of an impermeable insert is
/// a region of its own.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionMasks {
    porous: Vec<bool>,
    fluid: Vec<bool>,
    solid_surface: Option<Vec<bool>>,
}

impl RegionMasks {
    /// Builds masks from explicit membership vectors, checking that
    /// `porous` and `fluid` partition the points.
    pub fn new(
        porous: Vec<bool>,
        fluid: Vec<bool>,
        solid_surface: Option<Vec<bool>>,
    ) -> Result<Self, EvalError> {
        if porous.len() != fluid.len() {
            return input_err(format!(
                "porous mask covers {} points but fluid mask covers {}",
                porous.len(),
                fluid.len()
            ));
        }
        if let Some(pos) = porous.iter().zip(&fluid).position(|(&p, &f)| p == f) {
            return input_err(format!(
                "point {pos} must belong to exactly one of the porous and fluid regions"
            ));
        }
        if let Some(solid) = &solid_surface {
            if solid.len() != porous.len() {
                return input_err(format!(
                    "solid-surface mask covers {} points but the case has {}",
                    solid.len(),
                    porous.len()
                ));
            }
        }
        Ok(RegionMasks { porous, fluid, solid_surface })
    }

    /// Derives the masks from a case: the porous indicator splits porous
    /// from fluid, and wall points of three-dimensional cases form the
    /// solid-surface region.
    pub fn from_case(case: &PointCloudCase) -> Self {
        let porous: Vec<bool> = case.points.iter().map(|p| p.chi == 1).collect();
        let fluid: Vec<bool> = porous.iter().map(|&p| !p).collect();
        let solid_surface = if case.dim == 3 {
            let walls: Vec<bool> = case
                .points
                .iter()
                .map(|p| p.boundary == BoundaryTag::Wall)
                .collect();
            walls.iter().any(|&w| w).then_some(walls)
        } else {
            None
        };
        RegionMasks { porous, fluid, solid_surface }
    }

    /// Number of points the masks cover.
    pub fn len(&self) -> usize {
        self.porous.len()
    }

    pub fn is_empty(&self) -> bool {
        self.porous.is_empty()
    }

    fn count(mask: &[bool]) -> usize {
        mask.iter().filter(|&&m| m).count()
    }
}

/// Point counts behind each column of a [`RegionMaeTable`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegionCounts {
    pub global: usize,
    pub fluid: usize,
    pub porous: usize,
    /// `None` when the case has no solid-surface region at all.
    pub solid_surface: Option<usize>,
}

/// Mean absolute error of one output field across the regions.
///
/// `None` marks a region that is absent for this case, either because no
/// point belongs to it or because the case does not define it.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldMae {
    /// Field key: `u_x`, `u_y`, `u_z` for velocity components, `p` for
    /// pressure.
    pub field: String,
    pub global: f64,
    pub fluid: Option<f64>,
    pub porous: Option<f64>,
    pub solid_surface: Option<f64>,
}

/// Region-wise mean absolute errors for every output field of a case, in
/// physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionMaeTable {
    dim: usize,
    counts: RegionCounts,
    rows: Vec<FieldMae>,
}

impl RegionMaeTable {
    /// Spatial dimension of the underlying case.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn counts(&self) -> RegionCounts {
        self.counts
    }

    /// One row per field: velocity components first, pressure last.
    pub fn rows(&self) -> &[FieldMae] {
        &self.rows
    }

    /// Looks up one field's row by its key.
    pub fn row(&self, field: &str) -> Option<&FieldMae> {
        self.rows.iter().find(|r| r.field == field)
    }

    /// Renders the table as aligned, human-readable text.
    pub fn text_table(&self) -> String {
        let mut columns = vec![
            ("global", self.counts.global),
            ("fluid", self.counts.fluid),
            ("porous", self.counts.porous),
        ];
        if let Some(n) = self.counts.solid_surface {
            columns.push(("solid-surface", n));
        }
        let mut out = String::new();
        let _ = write!(out, "{:<8}", "field");
        for (name, count) in &columns {
            let _ = write!(out, "  {:>13}", format!("{name} ({count})"));
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:<8}", row.field);
            let cells = [
                Some(row.global),
                row.fluid,
                row.porous,
                row.solid_surface,
            ];
            for (i, _) in columns.iter().enumerate() {
                match cells[i] {
                    Some(value) => {
                        let _ = write!(out, "  {:>13.6e}", value);
                    }
                    None => {
                        let _ = write!(out, "  {:>13}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    /// Serializes the table as columnar text: a `field,region,count,mae`
    /// header, then one row per field and region. Absent regions carry the
    /// literal `absent` in the `mae` column; all other errors are written
    /// in full precision.
    pub fn to_columnar(&self) -> String {
        let mut out = String::from("field,region,count,mae\n");
        for row in &self.rows {
            let mut push = |region: &str, count: usize, value: Option<f64>| {
                let cell = match value {
                    Some(v) => fmt_float(v),
                    None => "absent".to_string(),
                };
                let _ = writeln!(out, "{},{region},{count},{cell}", row.field);
            };
            push("global", self.counts.global, Some(row.global));
            push("fluid", self.counts.fluid, row.fluid);
            push("porous", self.counts.porous, row.porous);
            if let Some(n) = self.counts.solid_surface {
                push("solid-surface", n, row.solid_surface);
            }
        }
        out
    }

    /// Parses a table back from its columnar form.
    pub fn from_columnar(text: &str) -> Result<Self, EvalError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "field,region,count,mae")) => {}
            _ => return parse_err("expected a field,region,count,mae header"),
        }
        struct Partial {
            field: String,
            global: Option<(usize, f64)>,
            fluid: Option<(usize, Option<f64>)>,
            porous: Option<(usize, Option<f64>)>,
            solid_surface: Option<(usize, Option<f64>)>,
        }
        let mut partials: Vec<Partial> = Vec::new();
        for (index, line) in lines {
            if line.is_empty() {
                continue;
            }
            let lineno = index + 1;
            let mut parts = line.split(',');
            let (field, region, count, mae) = match (
                parts.next(),
                parts.next(),
                parts.next(),
                parts.next(),
                parts.next(),
            ) {
                (Some(f), Some(r), Some(c), Some(m), None) => (f, r, c, m),
                _ => return parse_err(format!("line {lineno}: expected 4 columns")),
            };
            let count: usize = count
                .parse()
                .map_err(|_| EvalError::Parse {
                    reason: format!("line {lineno}: bad count {count:?}"),
                })?;
            let value = if mae == "absent" {
                None
            } else {
                let v: f64 = mae.parse().map_err(|_| EvalError::Parse {
                    reason: format!("line {lineno}: bad error value {mae:?}"),
                })?;
                Some(v)
            };
            let partial = match partials.iter_mut().find(|p| p.field == field) {
                Some(p) => p,
                None => {
                    partials.push(Partial {
                        field: field.to_string(),
                        global: None,
                        fluid: None,
                        porous: None,
                        solid_surface: None,
                    });
                    partials.last_mut().expect("just pushed")
                }
            };
            let slot = match region {
                "global" => {
                    let value = value.ok_or_else(|| EvalError::Parse {
                        reason: format!("line {lineno}: the global error cannot be absent"),
                    })?;
                    if partial.global.replace((count, value)).is_some() {
                        return parse_err(format!("line {lineno}: duplicate global row"));
                    }
                    continue;
                }
                "fluid" => &mut partial.fluid,
                "porous" => &mut partial.porous,
                "solid-surface" => &mut partial.solid_surface,
                other => {
                    return parse_err(format!("line {lineno}: unknown region {other:?}"))
                }
            };
            if slot.replace((count, value)).is_some() {
                return parse_err(format!("line {lineno}: duplicate {region} row"));
            }
        }
        if partials.is_empty() {
            return parse_err("no data rows");
        }
        let dim = if partials.iter().any(|p| p.field == "u_z") { 3 } else { 2 };
        let mut counts: Option<RegionCounts> = None;
        let mut rows = Vec::new();
        for p in partials {
            let (global_count, global) = p
                .global
                .ok_or_else(|| EvalError::Parse {
                    reason: format!("field {} has no global row", p.field),
                })?;
            let (fluid_count, fluid) = p.fluid.ok_or_else(|| EvalError::Parse {
                reason: format!("field {} has no fluid row", p.field),
            })?;
            let (porous_count, porous) = p.porous.ok_or_else(|| EvalError::Parse {
                reason: format!("field {} has no porous row", p.field),
            })?;
            let row_counts = RegionCounts {
                global: global_count,
                fluid: fluid_count,
                porous: porous_count,
                solid_surface: p.solid_surface.as_ref().map(|&(n, _)| n),
            };
            match counts {
                None => counts = Some(row_counts),
                Some(existing) if existing == row_counts => {}
                Some(_) => {
                    return parse_err(format!(
                        "field {} disagrees with earlier rows about region sizes",
                        p.field
                    ));
                }
            }
            rows.push(FieldMae {
                field: p.field,
                global,
                fluid,
                porous,
                solid_surface: p.solid_surface.and_then(|(_, v)| v),
            });
        }
        let counts = counts.expect("at least one field row");
        Ok(RegionMaeTable { dim, counts, rows })
    }
}

/// Field keys in output order for a given dimension.
fn field_keys(dim: usize) -> Vec<&'static str> {
    match dim {
        2 => vec!["u_x", "u_y", "p"],
        3 => vec!["u_x", "u_y", "u_z", "p"],
        _ => unreachable!("dimensions are validated before key lookup"),
    }
}

/// Computes the mean absolute error of `predicted` against `reference`
/// per output field and region.
///
/// Both fields must be in physical units and cover the same points as the
/// masks. The global column is the plain mean over all points; region
/// columns average only their members and come back absent when a region
/// has no points.
pub fn mae_by_region(
    predicted: &FlowField,
    reference: &FlowField,
    masks: &RegionMasks,
) -> Result<RegionMaeTable, EvalError> {
    predicted.validate()?;
    reference.validate()?;
    if predicted.units != Units::Physical || reference.units != Units::Physical {
        return input_err("error tables are defined over physical units; denormalize first");
    }
    let dim = predicted.dim();
    if dim != reference.dim() {
        return input_err(format!(
            "predicted field has {dim} velocity components but the reference has {}",
            reference.dim()
        ));
    }
    if !(2..=3).contains(&dim) {
        return input_err(format!("unsupported spatial dimension {dim}"));
    }
    let n = predicted.rows();
    if reference.rows() != n {
        return input_err(format!(
            "predicted field covers {n} points but the reference covers {}",
            reference.rows()
        ));
    }
    if masks.len() != n {
        return input_err(format!(
            "fields cover {n} points but the masks cover {}",
            masks.len()
        ));
    }
    if n == 0 {
        return input_err("cannot average over an empty point cloud");
    }
    let column = |field: usize, i: usize| -> f64 {
        if field < dim {
            (predicted.velocity[[i, field]] - reference.velocity[[i, field]]).abs()
        } else {
            (predicted.pressure[i] - reference.pressure[i]).abs()
        }
    };
    let masked_mean = |field: usize, mask: &[bool]| -> Option<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (i, &member) in mask.iter().enumerate() {
            if member {
                sum += column(field, i);
                count += 1;
            }
        }
        (count > 0).then_some(sum / count as f64)
    };
    let counts = RegionCounts {
        global: n,
        fluid: RegionMasks::count(&masks.fluid),
        porous: RegionMasks::count(&masks.porous),
        solid_surface: masks.solid_surface.as_deref().map(RegionMasks::count),
    };
    let mut rows = Vec::new();
    for (f, key) in field_keys(dim).into_iter().enumerate() {
        let global = (0..n).map(|i| column(f, i)).sum::<f64>() / n as f64;
        rows.push(FieldMae {
            field: key.to_string(),
            global,
            fluid: masked_mean(f, &masks.fluid),
            porous: masked_mean(f, &masks.porous),
            solid_surface: masks
                .solid_surface
                .as_deref()
                .and_then(|mask| masked_mean(f, mask)),
        });
    }
    Ok(RegionMaeTable { dim, counts, rows })
}

/// Averages per-case error tables within each distinct Darcy coefficient.
///
/// Input entries pair a case's Darcy coefficient with its error table.
/// Cases sharing a coefficient are averaged arithmetically per field and
/// region (absent regions are skipped, and stay absent only when absent
/// everywhere in the group); point counts are summed. Groups come back
/// sorted by coefficient, ascending.
pub fn group_errors_by_coefficient(
    entries: &[(f64, RegionMaeTable)],
) -> Result<Vec<(f64, RegionMaeTable)>, EvalError> {
    if entries.is_empty() {
        return input_err("no error tables to group");
    }
    let dim = entries[0].1.dim;
    let keys: Vec<String> = entries[0].1.rows.iter().map(|r| r.field.clone()).collect();
    for (coefficient, table) in entries {
        if !coefficient.is_finite() {
            return input_err("porous coefficients must be finite");
        }
        if table.dim != dim {
            return input_err("cannot group tables of different dimensions");
        }
        let fields: Vec<String> = table.rows.iter().map(|r| r.field.clone()).collect();
        if fields != keys {
            return input_err("cannot group tables with different field rows");
        }
    }
    let mut groups: BTreeMap<u64, (f64, Vec<&RegionMaeTable>)> = BTreeMap::new();
    for (coefficient, table) in entries {
        groups
            .entry(coefficient.to_bits())
            .or_insert_with(|| (*coefficient, Vec::new()))
            .1
            .push(table);
    }
    let mut grouped: Vec<(f64, RegionMaeTable)> = Vec::new();
    for (coefficient, tables) in groups.into_values() {
        let counts = RegionCounts {
            global: tables.iter().map(|t| t.counts.global).sum(),
            fluid: tables.iter().map(|t| t.counts.fluid).sum(),
            porous: tables.iter().map(|t| t.counts.porous).sum(),
            solid_surface: tables
                .iter()
                .any(|t| t.counts.solid_surface.is_some())
                .then(|| {
                    tables
                        .iter()
                        .filter_map(|t| t.counts.solid_surface)
                        .sum()
                }),
        };
        let mut rows = Vec::new();
        for (index, key) in keys.iter().enumerate() {
            let mean_of = |pick: &dyn Fn(&FieldMae) -> Option<f64>| -> Option<f64> {
                let values: Vec<f64> =
                    tables.iter().filter_map(|t| pick(&t.rows[index])).collect();
                if values.is_empty() {
                    None
                } else {
                    Some(values.iter().sum::<f64>() / values.len() as f64)
                }
            };
            rows.push(FieldMae {
                field: key.clone(),
                global: mean_of(&|r| Some(r.global)).expect("group is nonempty"),
                fluid: mean_of(&|r| r.fluid),
                porous: mean_of(&|r| r.porous),
                solid_surface: mean_of(&|r| r.solid_surface),
            });
        }
        grouped.push((coefficient, RegionMaeTable { dim, counts, rows }));
    }
    grouped.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("coefficients are finite"));
    Ok(grouped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn close(a: f64, b: f64, tol: f64) {
        let scale = a.abs().max(b.abs()).max(1.0);
        assert!(
            (a - b).abs() <= tol * scale,
            "expected {a} and {b} to agree within {tol}"
        );
    }

    fn random_field(n: usize, dim: usize, rng: &mut ChaCha20Rng) -> FlowField {
        let velocity = Array2::from_shape_fn((n, dim), |_| rng.random_range(-2.0..2.0));
        let pressure = Array1::from_shape_fn(n, |_| rng.random_range(-2.0..2.0));
        FlowField { units: Units::Physical, velocity, pressure }
    }

    fn random_masks(n: usize, rng: &mut ChaCha20Rng) -> RegionMasks {
        let porous: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.4).collect();
        let fluid: Vec<bool> = porous.iter().map(|&p| !p).collect();
        RegionMasks::new(porous, fluid, None).unwrap()
    }

    #[test]
    fn a_perfect_prediction_scores_zero_everywhere() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let reference = random_field(30, 2, &mut rng);
        let masks = random_masks(30, &mut rng);
        let table = mae_by_region(&reference, &reference, &masks).unwrap();
        for row in table.rows() {
            assert_eq!(row.global, 0.0);
            assert_eq!(row.fluid, Some(0.0));
            assert_eq!(row.porous, Some(0.0));
            assert_eq!(row.solid_surface, None);
        }
    }

    #[test]
    fn a_uniform_offset_shows_up_in_every_region() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let reference = random_field(40, 2, &mut rng);
        let mut predicted = reference.clone();
        predicted.velocity.column_mut(0).mapv_inplace(|v| v + 0.1);
        let masks = random_masks(40, &mut rng);
        let table = mae_by_region(&predicted, &reference, &masks).unwrap();
        let ux = table.row("u_x").unwrap();
        close(ux.global, 0.1, 1e-12);
        close(ux.fluid.unwrap(), 0.1, 1e-12);
        close(ux.porous.unwrap(), 0.1, 1e-12);
        for key in ["u_y", "p"] {
            let row = table.row(key).unwrap();
            assert_eq!(row.global, 0.0);
            assert_eq!(row.fluid, Some(0.0));
            assert_eq!(row.porous, Some(0.0));
        }
    }

    #[test]
    fn every_entry_matches_a_direct_filtered_average() {
        let n = 100;
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let predicted = random_field(n, 3, &mut rng);
        let reference = random_field(n, 3, &mut rng);
        let porous: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.5).collect();
        let fluid: Vec<bool> = porous.iter().map(|&p| !p).collect();
        let solid: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.2).collect();
        let masks =
            RegionMasks::new(porous.clone(), fluid.clone(), Some(solid.clone())).unwrap();
        let table = mae_by_region(&predicted, &reference, &masks).unwrap();

        let direct = |field: usize, keep: &dyn Fn(usize) -> bool| -> Option<f64> {
            let mut errors = Vec::new();
            for i in 0..n {
                if keep(i) {
                    let e = if field < 3 {
                        (predicted.velocity[[i, field]] - reference.velocity[[i, field]]).abs()
                    } else {
                        (predicted.pressure[i] - reference.pressure[i]).abs()
                    };
                    errors.push(e);
                }
            }
            if errors.is_empty() {
                None
            } else {
                Some(errors.iter().sum::<f64>() / errors.len() as f64)
            }
        };
        for (f, key) in ["u_x", "u_y", "u_z", "p"].into_iter().enumerate() {
            let row = table.row(key).unwrap();
            close(row.global, direct(f, &|_| true).unwrap(), 1e-12);
            close(row.fluid.unwrap(), direct(f, &|i| fluid[i]).unwrap(), 1e-12);
            close(row.porous.unwrap(), direct(f, &|i| porous[i]).unwrap(), 1e-12);
            close(
                row.solid_surface.unwrap(),
                direct(f, &|i| solid[i]).unwrap(),
                1e-12,
            );
        }
    }

    #[test]
    fn an_empty_region_is_reported_absent_not_zero() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let predicted = random_field(12, 2, &mut rng);
        let reference = random_field(12, 2, &mut rng);
        let masks = RegionMasks::new(vec![false; 12], vec![true; 12], None).unwrap();
        let table = mae_by_region(&predicted, &reference, &masks).unwrap();
        assert_eq!(table.counts().porous, 0);
        for row in table.rows() {
            assert_eq!(row.porous, None);
            assert_eq!(row.fluid, Some(row.global));
        }
        let text = table.to_columnar();
        assert!(text.contains("u_x,porous,0,absent"));
    }

    #[test]
    fn the_global_error_is_the_count_weighted_mean_of_the_regions() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for round in 0..20 {
            let n = 10 + round;
            let predicted = random_field(n, 2, &mut rng);
            let reference = random_field(n, 2, &mut rng);
            let masks = random_masks(n, &mut rng);
            let table = mae_by_region(&predicted, &reference, &masks).unwrap();
            let counts = table.counts();
            for row in table.rows() {
                assert!(row.global.is_finite());
                let mut weighted = 0.0;
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for (value, count) in
                    [(row.fluid, counts.fluid), (row.porous, counts.porous)]
                {
                    if let Some(v) = value {
                        weighted += v * count as f64;
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                close(row.global, weighted / counts.global as f64, 1e-12);
                assert!(row.global >= lo - 1e-12 && row.global <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn normalized_fields_are_refused() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let mut predicted = random_field(8, 2, &mut rng);
        let reference = random_field(8, 2, &mut rng);
        predicted.units = Units::Normalized;
        let masks = random_masks(8, &mut rng);
        let err = mae_by_region(&predicted, &reference, &masks).unwrap_err();
        assert!(matches!(err, EvalError::Input { .. }));
    }

    #[test]
    fn tables_round_trip_through_the_columnar_form() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let predicted = random_field(25, 3, &mut rng);
        let reference = random_field(25, 3, &mut rng);
        let porous: Vec<bool> = (0..25).map(|i| i % 3 == 0).collect();
        let fluid: Vec<bool> = porous.iter().map(|&p| !p).collect();
        let solid: Vec<bool> = (0..25).map(|i| i % 7 == 0).collect();
        let masks = RegionMasks::new(porous, fluid, Some(solid)).unwrap();
        let table = mae_by_region(&predicted, &reference, &masks).unwrap();
        let text = table.to_columnar();
        let parsed = RegionMaeTable::from_columnar(&text).unwrap();
        assert_eq!(parsed, table);

        let garbled = text.replace("field,region,count,mae", "a,b");
        assert!(RegionMaeTable::from_columnar(&garbled).is_err());
    }

    #[test]
    fn the_text_table_marks_absent_regions_with_a_dash() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let predicted = random_field(9, 2, &mut rng);
        let reference = random_field(9, 2, &mut rng);
        let masks = RegionMasks::new(vec![true; 9], vec![false; 9], None).unwrap();
        let table = mae_by_region(&predicted, &reference, &masks).unwrap();
        let text = table.text_table();
        assert!(text.contains("fluid (0)"));
        assert!(text.contains('-'));
        assert!(!text.contains("solid-surface"));
    }

    #[test]
    fn mismatched_masks_are_rejected() {
        assert!(RegionMasks::new(vec![true, true], vec![false], None).is_err());
        assert!(RegionMasks::new(vec![true, true], vec![false, true], None).is_err());
        assert!(
            RegionMasks::new(vec![true, false], vec![false, true], Some(vec![true])).is_err()
        );
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let predicted = random_field(4, 2, &mut rng);
        let reference = random_field(5, 2, &mut rng);
        let masks = random_masks(4, &mut rng);
        assert!(mae_by_region(&predicted, &reference, &masks).is_err());
    }

    fn table_with(global: [f64; 3], porous_count: usize, fluid_count: usize) -> RegionMaeTable {
        let rows = ["u_x", "u_y", "p"]
            .into_iter()
            .zip(global)
            .map(|(field, g)| FieldMae {
                field: field.to_string(),
                global: g,
                fluid: (fluid_count > 0).then_some(g + 0.5),
                porous: (porous_count > 0).then_some(g - 0.25),
                solid_surface: None,
            })
            .collect();
        RegionMaeTable {
            dim: 2,
            counts: RegionCounts {
                global: porous_count + fluid_count,
                fluid: fluid_count,
                porous: porous_count,
                solid_surface: None,
            },
            rows,
        }
    }

    #[test]
    fn a_single_case_groups_to_itself() {
        let table = table_with([0.5, 0.25, 1.0], 3, 7);
        let grouped =
            group_errors_by_coefficient(&[(36000.0, table.clone())]).unwrap();
        assert_eq!(grouped.len(), 1);
        assert_eq!(grouped[0].0, 36000.0);
        assert_eq!(grouped[0].1, table);
    }

    #[test]
    fn cases_sharing_a_coefficient_average_arithmetically() {
        let a = table_with([0.01, 0.02, 0.04], 4, 6);
        let b = table_with([0.03, 0.06, 0.08], 5, 5);
        let grouped =
            group_errors_by_coefficient(&[(1000.0, a), (1000.0, b)]).unwrap();
        assert_eq!(grouped.len(), 1);
        let table = &grouped[0].1;
        close(table.row("u_x").unwrap().global, 0.02, 1e-12);
        close(table.row("u_y").unwrap().global, 0.04, 1e-12);
        close(table.row("p").unwrap().global, 0.06, 1e-12);
        assert_eq!(table.counts().global, 20);
        assert_eq!(table.counts().porous, 9);
    }

    #[test]
    fn distinct_coefficients_come_back_sorted() {
        let entries: Vec<(f64, RegionMaeTable)> = [16000.0, 1000.0, 14000.0, 2000.0]
            .into_iter()
            .enumerate()
            .map(|(i, d)| (d, table_with([i as f64; 3], 2, 2)))
            .collect();
        let grouped = group_errors_by_coefficient(&entries).unwrap();
        let order: Vec<f64> = grouped.iter().map(|(d, _)| *d).collect();
        assert_eq!(order, vec![1000.0, 2000.0, 14000.0, 16000.0]);
        close(grouped[0].1.row("u_x").unwrap().global, 1.0, 1e-12);
        close(grouped[3].1.row("u_x").unwrap().global, 0.0, 1e-12);
    }

    #[test]
    fn equal_sized_groups_average_like_concatenated_points() {
        let n = 16;
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let porous: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let fluid: Vec<bool> = porous.iter().map(|&p| !p).collect();
        let masks = RegionMasks::new(porous, fluid, None).unwrap();

        let ref_a = random_field(n, 2, &mut rng);
        let pred_a = random_field(n, 2, &mut rng);
        let ref_b = random_field(n, 2, &mut rng);
        let pred_b = random_field(n, 2, &mut rng);
        let table_a = mae_by_region(&pred_a, &ref_a, &masks).unwrap();
        let table_b = mae_by_region(&pred_b, &ref_b, &masks).unwrap();
        let grouped =
            group_errors_by_coefficient(&[(500.0, table_a), (500.0, table_b)]).unwrap();

        let concat = |a: &FlowField, b: &FlowField| -> FlowField {
            let mut velocity = Array2::zeros((2 * n, 2));
            let mut pressure = Array1::zeros(2 * n);
            for i in 0..n {
                for k in 0..2 {
                    velocity[[i, k]] = a.velocity[[i, k]];
                    velocity[[n + i, k]] = b.velocity[[i, k]];
                }
                pressure[i] = a.pressure[i];
                pressure[n + i] = b.pressure[i];
            }
            FlowField { units: Units::Physical, velocity, pressure }
        };
        let big_porous: Vec<bool> = (0..2 * n).map(|i| i % n % 2 == 0).collect();
        let big_fluid: Vec<bool> = big_porous.iter().map(|&p| !p).collect();
        let big_masks = RegionMasks::new(big_porous, big_fluid, None).unwrap();
        let combined = mae_by_region(
            &concat(&pred_a, &pred_b),
            &concat(&ref_a, &ref_b),
            &big_masks,
        )
        .unwrap();

        for key in ["u_x", "u_y", "p"] {
            let g = grouped[0].1.row(key).unwrap();
            let c = combined.row(key).unwrap();
            close(g.global, c.global, 1e-12);
            close(g.fluid.unwrap(), c.fluid.unwrap(), 1e-12);
            close(g.porous.unwrap(), c.porous.unwrap(), 1e-12);
        }
        assert_eq!(grouped[0].1.counts().global, combined.counts().global);
    }

    #[test]
    fn grouping_rejects_mixed_shapes_and_bad_coefficients() {
        assert!(group_errors_by_coefficient(&[]).is_err());
        let two = table_with([0.1, 0.2, 0.3], 2, 2);
        assert!(group_errors_by_coefficient(&[(f64::NAN, two.clone())]).is_err());
        let mut three = two.clone();
        three.dim = 3;
        assert!(group_errors_by_coefficient(&[(1.0, two), (2.0, three)]).is_err());
    }
}
