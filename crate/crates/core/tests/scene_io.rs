use std::path::PathBuf;

use proptest::prelude::*;
use unicol::scenarios::{arm_around_box, box_swap, sphere_swap};
use unicol::scene_io::{export_trajectory, load_scene, save_scene, ExportFormat};
use unicol::trajopt::{Scene, Trajectory};

fn corpus() -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenes");
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    assert!(!files.is_empty());
    files
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read_to_string(&p).unwrap(),
            )
        })
        .collect()
}

fn scene_file(name: &str) -> Scene {
    let (_, text) = corpus().into_iter().find(|(n, _)| n == name).unwrap();
    load_scene(&text).unwrap()
}

#[test]
fn corpus_round_trips() {
    for (name, text) in corpus() {
        let scene = load_scene(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        let saved = save_scene(&scene);
        let again = load_scene(&saved).unwrap();
        assert_eq!(again, scene, "{name}");
        assert_eq!(save_scene(&again), saved, "{name}");
    }
}

#[test]
fn scene_files_match_built_in_scenarios() {
    assert_eq!(scene_file("sphere_swap.json"), sphere_swap(50).unwrap());
    assert_eq!(scene_file("box_swap.json"), box_swap(50).unwrap());
    assert_eq!(scene_file("arm_box.json"), arm_around_box(160).unwrap());
}

/// Reads the exported CSV back into a stacked state matrix, independently of the exporter.
fn parse_csv(text: &str, scene: &Scene) -> (Vec<f64>, Vec<f64>) {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&header[..3], ["step", "time", "robot"]);
    let names: Vec<&str> = scene.robots().iter().map(|r| r.model.name()).collect();
    let mut data = Vec::new();
    let mut times = Vec::new();
    for (k, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), header.len());
        let r = k % names.len();
        assert_eq!(cells[0].parse::<usize>().unwrap(), k / names.len() + 1);
        assert_eq!(cells[2], names[r]);
        if r == 0 {
            times.push(cells[1].parse().unwrap());
        }
        let d = scene.robots()[r].model.dim();
        data.extend(cells[3..3 + d].iter().map(|c| c.parse::<f64>().unwrap()));
        assert!(cells[3 + d..].iter().all(|c| c.is_empty()));
    }
    (data, times)
}

#[test]
fn single_step_exports_one_row() {
    let scene = scene_file("two_spheres.json");
    let traj = scene.initial_trajectory();
    let csv = export_trajectory(&traj, &scene, ExportFormat::Csv, None).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2);
    let (_, times) = parse_csv(&csv, &scene);
    assert_eq!(times, [0.0]);
}

#[test]
fn mixed_joint_counts_leave_blank_cells() {
    let scene = scene_file("mixed_kinds.json");
    let csv =
        export_trajectory(&scene.initial_trajectory(), &scene, ExportFormat::Csv, None).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "step,time,robot,x,y,z,rx,ry,rz,q1,q2"
    );
    let (data, times) = parse_csv(&csv, &scene);
    assert_eq!(data, scene.initial_trajectory().as_slice());
    assert_eq!(times.len(), 12);
    assert_eq!(times[2], 0.2);
}

#[test]
fn json_export_embeds_clearance() {
    let scene = scene_file("two_spheres.json");
    let traj = scene.initial_trajectory();
    let clearance = vec![Some(1.5)];
    let text = export_trajectory(&traj, &scene, ExportFormat::Json, Some(&clearance)).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["min_clearance"][0], 1.5);
    assert_eq!(doc["robots"][1]["name"], "small");
    assert_eq!(doc["robots"][1]["states"][0][0], 3.0);
    assert_eq!(doc["times"][0], 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(64) })]

    #[test]
    fn csv_reproduces_states_exactly(values in prop::collection::vec(-1e3f64..1e3, 12 * 3 * 20)) {
        let scene = scene_file("mixed_kinds.json");
        let dim = scene.dim();
        let traj = Trajectory::new(12, dim, 0.1, values[..12 * dim].to_vec()).unwrap();
        let csv = export_trajectory(&traj, &scene, ExportFormat::Csv, None).unwrap();
        let (data, _) = parse_csv(&csv, &scene);
        prop_assert_eq!(data.as_slice(), traj.as_slice());
    }
}
