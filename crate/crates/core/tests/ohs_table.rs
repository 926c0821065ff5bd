use std::collections::BTreeMap;

use grec_core::ohseval::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CRITERIA: [&str; 7] = ["Category", "Subtype", "Texture", "Color", "Variety", "Details", "Shape Difference"];

fn criterion_grid() -> (Vec<String>, Vec<Vec<Option<f64>>>) {
    let t = published_comparison();
    let grid = CRITERIA.iter().map(|c| t.row(c).unwrap().cells.clone()).collect();
    (t.systems, grid)
}

fn column_mean(grid: &[Vec<Option<f64>>], s: usize) -> f64 {
    grid.iter().map(|r| r[s].unwrap()).sum::<f64>() / grid.len() as f64
}

#[test]
fn uniform_weights_give_plain_mean() {
    let (systems, grid) = criterion_grid();
    let names: Vec<String> = CRITERIA.iter().map(|s| s.to_string()).collect();
    let agg = Aggregation::from_percentages(systems, names, grid.clone(), vec![1.0; 7]).unwrap();
    let v1 = agg.ohs_of("V1").unwrap();
    assert!((v1 - 56.84).abs() <= 0.01, "{v1}");
    assert_eq!(round2(v1), 56.84);
    for s in 0..5 {
        assert!((agg.ohs[s].unwrap() - column_mean(&grid, s)).abs() < 1e-9);
    }
}

#[test]
fn single_criterion_reproduces_cells() {
    let (systems, grid) = criterion_grid();
    let names: Vec<String> = CRITERIA.iter().map(|s| s.to_string()).collect();
    for (ci, c) in CRITERIA.iter().enumerate() {
        let w: Vec<f64> = (0..7).map(|i| if i == ci { 1.0 } else { 0.0 }).collect();
        let agg = Aggregation::from_percentages(systems.clone(), names.clone(), grid.clone(), w).unwrap();
        for (si, s) in systems.iter().enumerate() {
            assert_eq!(agg.ohs_of(s), grid[ci][si], "{c}/{s}");
        }
    }
    let w: Vec<f64> = (0..7).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
    let agg = Aggregation::from_percentages(systems, names, grid, w).unwrap();
    assert_eq!(format!("{:.2}%", agg.ohs_of("V4").unwrap()), "99.80%");
}

#[test]
fn renderer_marks_best_and_worst() {
    let t = published_comparison();
    let expected = [
        ("Category", "V4", "V2"),
        ("Subtype", "V5", "V2"),
        ("Texture", "V4", "V1"),
        ("Color", "V5", "V3"),
        ("Variety", "V3", "V4"),
        ("Details", "V2", "V3"),
        ("Shape Difference", "V1", "V3"),
    ];
    for (row, best, worst) in expected {
        let r = t.row(row).unwrap();
        assert_eq!(t.systems[r.best.unwrap().column], best, "{row}");
        assert_eq!(t.systems[r.worst.unwrap().column], worst, "{row}");
    }
    let text = t.render_text();
    let line = text.lines().find(|l| l.starts_with("Variety")).unwrap();
    assert!(line.contains("*best*") && line.contains("*worst*"));
}

#[test]
fn weighted_mean_stays_within_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        let n = rng.gen_range(1..10);
        let p: Vec<Option<f64>> = (0..n).map(|_| Some(rng.gen_range(0.0..=100.0))).collect();
        let mut w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
        w[0] += 0.1;
        let m = weighted_mean(&p, &w).unwrap();
        let lo = p.iter().zip(&w).filter(|(_, &w)| w > 0.0).map(|(v, _)| v.unwrap()).fold(f64::INFINITY, f64::min);
        let hi = p.iter().zip(&w).filter(|(_, &w)| w > 0.0).map(|(v, _)| v.unwrap()).fold(f64::NEG_INFINITY, f64::max);
        assert!(m >= lo - 1e-9 && m <= hi + 1e-9, "{m} not in [{lo}, {hi}]");

        let scaled: Vec<f64> = w.iter().map(|v| v * 3.7).collect();
        assert!((weighted_mean(&p, &scaled).unwrap() - m).abs() < 1e-9);
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let pp: Vec<Option<f64>> = perm.iter().map(|&i| p[i]).collect();
        let pw: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
        assert!((weighted_mean(&pp, &pw).unwrap() - m).abs() < 1e-9);
    }
}

#[test]
fn full_scoring_round() {
    let queries: Vec<QuerySpec> = (0..2)
        .map(|i| QuerySpec { query_id: format!("q{i}"), image: format!("q{i}.jpg"), domain: Domain::Shop })
        .collect();
    let results: BTreeMap<String, Vec<String>> =
        queries.iter().map(|q| (q.query_id.clone(), (0..10).map(|r| format!("r{r}")).collect())).collect();
    let sheet = make_sheet(
        "round",
        default_criteria(),
        &queries,
        &[("A".to_string(), &results as &dyn ResultSource), ("B".to_string(), &results)],
        10,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut records = Vec::new();
    for scorer in ["s1", "s2", "s3"] {
        let mut entries = Vec::new();
        for q in &sheet.queries {
            for s in &sheet.systems {
                for c in &sheet.criteria {
                    entries.push(RawScoreEntry {
                        query_id: q.query_id.clone(),
                        system: s.clone(),
                        criterion: c.name.clone(),
                        score: rng.gen_range(0..=10).into(),
                    });
                }
            }
        }
        assert_eq!(entries.len(), 28);
        let sub = ScoreSubmission { sheet_id: "round".into(), scorer_id: scorer.into(), entries };
        records.push(validate_scores(&sheet, &sub).unwrap());
    }
    let agg = aggregate(&sheet, &records, &sheet.criterion_weights()).unwrap();
    assert!(agg.gaps.is_empty());
    for s in ["A", "B"] {
        let mean: f64 = CRITERIA.iter().map(|c| agg.cell(c, s).unwrap()).sum::<f64>() / 7.0;
        assert!((agg.ohs_of(s).unwrap() - mean).abs() < 1e-9);
    }
    let table = ComparisonTable::from_aggregation(&agg.rounded());
    assert_eq!(table.rows.len(), 8);
    assert_eq!(table.rows[7].name, OHS_ROW);
}
