use exchgp::panel::{load_panel, make_split, subsample_controls, write_panel, PanelDataset, Schema, UnitSeries};
use proptest::prelude::*;

fn series(id: String, times: Vec<i64>, p: usize, tt: Option<i64>, vals: &[f64]) -> UnitSeries {
    let n = times.len();
    UnitSeries {
        id,
        outcomes: (0..n).map(|i| vals[i % vals.len()] * (i as f64 + 1.0)).collect(),
        covariates: (0..n).map(|i| (0..p).map(|j| vals[(i + j + 1) % vals.len()] - j as f64).collect()).collect(),
        times,
        treatment_time: tt,
    }
}

prop_compose! {
    fn panel()(
        m in 1usize..6,
        p in 0usize..3,
        t in 2i64..9,
        drops in prop::collection::vec(prop::collection::vec(any::<bool>(), 9), 6),
        treat in prop::collection::vec(prop::option::weighted(0.4, 1i64..9), 6),
        vals in prop::collection::vec(-1e6f64..1e6, 1..20),
    ) -> PanelDataset {
        let units = (0..m)
            .map(|i| {
                let mut times: Vec<i64> = (1..=t).filter(|&s| !drops[i][s as usize] || s == 1).collect();
                times.dedup();
                let tt = treat[i].map(|t| t.min(*times.last().unwrap()));
                series(format!("unit {i}"), times, p, tt, &vals)
            })
            .collect();
        PanelDataset::new((0..p).map(|j| format!("x{j}")).collect(), units).unwrap()
    }
}

proptest! {
    #[test]
    fn csv_round_trip_is_exact(data in panel()) {
        let mut buf = Vec::new();
        write_panel(&data, &mut buf).unwrap();
        let back = load_panel(buf.as_slice(), &Schema::default()).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn split_never_trains_on_treated_rows(data in panel(), pick in 0usize..6, t0 in 1i64..9, h in prop::option::of(1i64..5)) {
        let unit = &data.units[pick % data.m()];
        let Ok(split) = make_split(&data, &unit.id, t0, h) else { return Ok(()) };
        for r in &split.train_rows {
            let u = data.unit(&r.unit).unwrap();
            prop_assert!(!u.is_treated_at(r.time), "{:?}", r);
            if r.unit == unit.id {
                prop_assert!(r.time <= t0);
            }
        }
        for r in &split.pred_rows {
            prop_assert_eq!(&r.unit, &unit.id);
            prop_assert!(r.time > t0);
            if let Some(h) = h {
                prop_assert!(r.time <= t0 + h);
            }
        }
    }

    #[test]
    fn subsample_training_rows_match_balanced_count(
        m_total in 2usize..12,
        t in 3i64..10,
        m_frac in 0.0f64..1.0,
        t0_frac in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let mut units: Vec<UnitSeries> = (0..m_total)
            .map(|i| series(format!("c{i:02}"), (1..=t).collect(), 1, None, &[1.0, -2.0, 0.5]))
            .collect();
        let t0 = 1 + ((t - 2) as f64 * t0_frac) as i64;
        units.push(series("treated".into(), (1..=t).collect(), 1, Some(t0 + 1), &[3.0]));
        let data = PanelDataset::new(vec!["x0".into()], units).unwrap();
        let m = ((m_total as f64) * m_frac) as usize;
        let sub = subsample_controls(&data, "treated", m, seed).unwrap();
        prop_assert_eq!(sub.m(), m + 1);
        let split = make_split(&sub, "treated", t0, None).unwrap();
        prop_assert_eq!(split.train_rows.len(), t0 as usize + m * t as usize);
        prop_assert_eq!(subsample_controls(&data, "treated", m, seed).unwrap(), sub);
    }
}
