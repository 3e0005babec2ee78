macro_rules! example {
    ($module:ident, $file:literal, $test:ident) => {
        #[allow(dead_code)]
        #[path = $file]
        mod $module;

        #[test]
        fn $test() {
            $module::run_example().expect(concat!($file, " runs"));
        }
    };
}

example!(ingest_annotations, "../examples/ingest_annotations.rs", ingest_annotations_runs);
example!(grid_labels, "../examples/grid_labels.rs", grid_labels_runs);
example!(matching_and_losses, "../examples/matching_and_losses.rs", matching_and_losses_runs);
example!(reconstruct_table, "../examples/reconstruct_table.rs", reconstruct_table_runs);
example!(evaluate_metrics, "../examples/evaluate_metrics.rs", evaluate_metrics_runs);
example!(synthetic_roundtrip, "../examples/synthetic_roundtrip.rs", synthetic_roundtrip_runs);
example!(batch_cli, "../examples/batch_cli.rs", batch_cli_runs);
