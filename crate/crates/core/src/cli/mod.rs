//! Experiment runner, configuration, analysis exports and reports.

mod angles;
mod config;
mod manifest;
mod report;
mod run;

pub use angles::{max_angle_between_rows, principal_angles, ORTHONORMAL_TOL};
pub use config::{
    apply_override, load_config, parse_config, AnalyzeConfig, BaselineConfig, Command, EnvConfig, EvalConfig,
    ExperimentConfig, Method, Overrides, ReportConfig, SparseConfig, TransferConfig, UnseenTask,
};
pub use manifest::{blob_hash, Manifest, MANIFEST_FILE};
pub use report::{
    build_table, render_markdown, table_from_rows, write_references, write_results, write_success_table, Cell,
    CellStatus, MethodRow, ReferenceRow, ResultRow, SuccessTable, REFERENCES_FILE, RESULTS_FILE,
};
pub use run::{
    load_synergy, out_dir, run, task_set, FAILURE_FILE, LOG_FILE, POLICY_FILE, RESOLVED_CONFIG_FILE, SYNERGY_FILE,
    TASK_SET_FILE,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};

    #[test]
    fn principal_angle_examples() {
        let e1 = array![[1.0], [0.0], [0.0]];
        let e2 = array![[0.0], [1.0], [0.0]];
        let diag = array![[FRAC_1_SQRT_2], [FRAC_1_SQRT_2], [0.0]];
        assert_abs_diff_eq!(principal_angles(&e1, &e1).unwrap()[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(principal_angles(&e1, &e2).unwrap()[0], FRAC_PI_2, epsilon = 1e-12);
        assert_abs_diff_eq!(principal_angles(&e1, &diag).unwrap()[0], FRAC_PI_4, epsilon = 1e-12);
        let plane = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        let angles = principal_angles(&plane, &plane).unwrap();
        assert!(angles.iter().all(|a| a.abs() < 1e-7));
        assert!(matches!(principal_angles(&(&e1 * 2.0), &e2), Err(Error::Domain(_))));
    }

    #[test]
    fn overrides_follow_dot_paths() {
        let mut v = serde_json::json!({"command": "eval"});
        apply_override(&mut v, "train.alpha1=0.5").unwrap();
        apply_override(&mut v, "env.set=B").unwrap();
        assert_eq!(v["train"]["alpha1"], 0.5);
        assert_eq!(v["env"]["set"], "B");
        assert!(apply_override(&mut v, "noequals").is_err());
        assert!(apply_override(&mut v, "env.set.x=1").is_err());
    }

    #[test]
    fn config_resolution_and_errors() {
        let ov = Overrides::default();
        let cfg = parse_config(r#"{"command": "train-discosyn", "seed": 7}"#, "t", &ov).unwrap();
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.baseline.ae.seed, 7);
        let text = "{\n  \"command\": \"eval\",\n  \"alpha4\": 1\n}";
        match parse_config(text, "t", &ov) {
            Err(Error::Config(m)) => assert!(m.contains("alpha4") && m.contains("line 3"), "{m}"),
            other => panic!("{other:?}"),
        }
        let clash = r#"{"command": "train-discosyn", "seed": 1, "train": {"seed": 2}}"#;
        assert!(matches!(parse_config(clash, "t", &ov), Err(Error::Config(_))));
        let wrong = Overrides { command: Some(Command::Report), ..Overrides::default() };
        assert!(parse_config(r#"{"command": "eval", "eval": {"run": "x"}}"#, "t", &wrong).is_err());
        assert!(parse_config(r#"{"command": "transfer"}"#, "t", &ov).is_err());
        let with = Overrides { seed: Some(3), assignments: vec!["train.iterations=5".into()], ..Overrides::default() };
        let cfg = parse_config(r#"{"command": "train-discosyn"}"#, "t", &with).unwrap();
        assert_eq!((cfg.seed, cfg.train.seed, cfg.train.iterations), (3, 3, 5));
        let back = parse_config(&cfg.to_json_string(), "resolved", &Overrides::default()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn blob_hash_matches_git() {
        // `printf 'hello\n' | git hash-object --object-format=sha256 --stdin`
        assert_eq!(blob_hash(b"hello\n"), "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4");
    }

    fn result(method: &str, task: &str, ret: f64, reference: Option<f64>) -> ResultRow {
        ResultRow { method: method.into(), task: task.into(), eval_return: ret, reference, explained_variance: None }
    }

    #[test]
    fn table_layout_and_statuses() {
        let refs = vec![ReferenceRow { task: "t0".into(), reference: 50.0 }];
        let rows = vec![
            result("DiscoSyn4-L", "t0", 46.0, None),
            result("DiscoSyn4-L", "t1", 10.0, None),
            result("PCA4", "t0", 40.0, None),
            result("PCA4", "t1", 9.0, Some(10.0)),
        ];
        let t = table_from_rows(vec![("run".into(), "h".into(), rows)], &refs);
        assert_eq!(t.tasks, vec!["t0", "t1"]);
        let status: Vec<Vec<CellStatus>> =
            t.rows.iter().map(|r| r.cells.iter().map(|c| c.as_ref().unwrap().status).collect()).collect();
        assert_eq!(status, vec![vec![CellStatus::Pass, CellStatus::NoRef], vec![CellStatus::Fail, CellStatus::Pass]]);
        assert!(render_markdown(&t).contains("| PCA4 | ✗ | ✓ |"));
        assert!(render_markdown(&SuccessTable::default()).contains("No results"));
    }

    #[test]
    fn report_needs_manifests_and_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let run_dir = dir.path().join("a");
        std::fs::create_dir_all(&run_dir).unwrap();
        write_results(&run_dir.join(RESULTS_FILE), &[result("M", "t0", 1.0, Some(1.0))]).unwrap();
        assert!(matches!(build_table(&[run_dir.clone()]), Err(Error::Config(_))));
        Manifest::build(&run_dir).unwrap().write(&run_dir).unwrap();
        let mut cfg = ExperimentConfig::new(Command::Report);
        cfg.report.runs = vec![run_dir];
        let outs: Vec<Vec<u8>> = ["r1", "r2"]
            .iter()
            .map(|o| {
                cfg.out = Some(dir.path().join(o));
                let out = run(&cfg).unwrap();
                std::fs::read(out.join("report.md")).unwrap()
            })
            .collect();
        assert_eq!(outs[0], outs[1]);
        let table = build_table(&cfg.report.runs).unwrap();
        assert_eq!(table.rows[0].cells[0].as_ref().unwrap().status, CellStatus::Pass);
    }

    #[test]
    fn max_row_angle_of_identical_spans_is_zero() {
        let a = Array2::from_shape_vec((2, 3), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let b = Array2::from_shape_vec((2, 3), vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(max_angle_between_rows(&a, &b).unwrap() < 1e-7);
    }
}
