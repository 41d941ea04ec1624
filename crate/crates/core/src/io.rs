//! File formats for chains, partitions, measures and paths.
//!
//! Chains and partitions travel as JSON keyed by state labels; vectors
//! and paths travel as two-column CSV.  State labels may contain commas
//! (lattice models use coordinate labels), so CSV readers split each
//! row at the comma adjacent to the numeric column instead of quoting.
//! Writes land in a sibling temporary file and are renamed into place,
//! so a crash never leaves a half-written file behind.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chain::{Chain, Observable, ProbabilityMeasure, RateMatrix, StateSpace};
use crate::error::{Error, Result};
use crate::simulate::Trajectory;
use crate::spectral::MixingProfile;
use crate::transforms::{OrderPath, Partition};

#[derive(Serialize, Deserialize)]
struct ChainFile {
    states: Vec<String>,
    rates: Vec<(usize, usize, f64)>,
}

#[derive(Serialize, Deserialize)]
struct PartitionFile {
    wells: Vec<Vec<String>>,
    #[serde(default = "implicit")]
    delta: String,
}

fn implicit() -> String {
    "implicit".into()
}

/// Writes `contents` atomically: a sibling temporary file is renamed
/// over the target, so readers only ever see complete output.
pub fn write_text(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    let mut name = path
        .file_name()
        .ok_or_else(|| Error::Parse(format!("not a file path: {}", path.display())))?
        .to_os_string();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Chains
// ---------------------------------------------------------------------------

/// `{ "states": [labels], "rates": [[i, j, value], ...] }`, one rate
/// entry per line in row-major order.
pub fn write_chain(path: impl AsRef<Path>, chain: &Chain) -> Result<()> {
    let mut out = String::from("{\n  \"states\": [");
    for (i, label) in chain.space().labels().iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&serde_json::to_string(label).expect("string"));
    }
    out.push_str("],\n  \"rates\": [\n");
    let mut first = true;
    for (i, j, r) in chain.rates().iter_entries() {
        if !first {
            out.push_str(",\n");
        }
        first = false;
        let _ = write!(out, "    [{i}, {j}, {r}]");
    }
    out.push_str("\n  ]\n}\n");
    write_text(path, &out)
}

/// Reads a chain file, rebuilding and revalidating the chain.
pub fn read_chain(path: impl AsRef<Path>) -> Result<Chain> {
    let path = path.as_ref();
    let file: ChainFile = serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let n = file.states.len();
    for (k, &(i, j, _)) in file.rates.iter().enumerate() {
        if i >= n || j >= n {
            return Err(Error::Parse(format!(
                "{}: rates[{k}] references state {} but there are {n} states",
                path.display(),
                i.max(j)
            )));
        }
    }
    let space = StateSpace::new(file.states)?;
    let rates = RateMatrix::from_triples(n, &file.rates)?;
    Chain::build_labeled(space, rates)
}

// ---------------------------------------------------------------------------
// Partitions
// ---------------------------------------------------------------------------

/// `{ "wells": [[labels], ...], "delta": "implicit" }`; the passage set
/// is always the complement of the wells.
pub fn write_partition(
    path: impl AsRef<Path>,
    partition: &Partition,
    space: &StateSpace,
) -> Result<()> {
    let mut out = String::from("{\n  \"wells\": [\n");
    for (x, well) in partition.wells().iter().enumerate() {
        if x > 0 {
            out.push_str(",\n");
        }
        out.push_str("    [");
        for (k, &i) in well.iter().enumerate() {
            if k > 0 {
                out.push_str(", ");
            }
            out.push_str(&serde_json::to_string(space.label(i)).expect("string"));
        }
        out.push(']');
    }
    out.push_str("\n  ],\n  \"delta\": \"implicit\"\n}\n");
    write_text(path, &out)
}

pub fn read_partition(path: impl AsRef<Path>, space: &StateSpace) -> Result<Partition> {
    let path = path.as_ref();
    let file: PartitionFile = serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if file.delta != "implicit" {
        return Err(Error::Parse(format!(
            "{}: delta must be \"implicit\", got \"{}\"",
            path.display(),
            file.delta
        )));
    }
    let mut wells = Vec::with_capacity(file.wells.len());
    for (x, labels) in file.wells.iter().enumerate() {
        let mut well = Vec::with_capacity(labels.len());
        for (k, label) in labels.iter().enumerate() {
            well.push(space.index_of(label).ok_or_else(|| {
                Error::Parse(format!(
                    "{}: wells[{x}][{k}] names unknown state '{label}'",
                    path.display()
                ))
            })?);
        }
        wells.push(well);
    }
    Partition::new(space.len(), wells)
}

// ---------------------------------------------------------------------------
// Two-column CSV
// ---------------------------------------------------------------------------

/// Splits a row whose numeric column comes last; the label keeps any
/// commas of its own.
fn split_label_number(line: &str) -> Option<(&str, &str)> {
    line.rsplit_once(',')
}

fn check_header(path: &Path, line: Option<&str>, expected: &str) -> Result<()> {
    match line {
        Some(l) if l.trim_end() == expected => Ok(()),
        other => Err(Error::Parse(format!(
            "{}: expected header '{expected}', got {:?}",
            path.display(),
            other.unwrap_or("")
        ))),
    }
}

fn labeled_column(
    path: &Path,
    text: &str,
    header: &str,
    space: &StateSpace,
) -> Result<Vec<Option<f64>>> {
    let mut lines = text.lines();
    check_header(path, lines.next(), header)?;
    let mut values: Vec<Option<f64>> = vec![None; space.len()];
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (label, number) = split_label_number(line).ok_or_else(|| {
            Error::Parse(format!("{}: row {}: no comma", path.display(), row + 2))
        })?;
        let i = space.index_of(label).ok_or_else(|| {
            Error::Parse(format!(
                "{}: row {}: unknown state '{label}'",
                path.display(),
                row + 2
            ))
        })?;
        if values[i].is_some() {
            return Err(Error::Parse(format!(
                "{}: row {}: state '{label}' appears twice",
                path.display(),
                row + 2
            )));
        }
        let v: f64 = number.trim().parse().map_err(|_| {
            Error::Parse(format!(
                "{}: row {}: bad number '{number}'",
                path.display(),
                row + 2
            ))
        })?;
        values[i] = Some(v);
    }
    Ok(values)
}

/// CSV `state,weight` over the whole state space.
pub fn write_measure(
    path: impl AsRef<Path>,
    measure: &ProbabilityMeasure,
    space: &StateSpace,
) -> Result<()> {
    let mut out = String::from("state,weight\n");
    for i in 0..space.len() {
        let _ = writeln!(out, "{},{}", space.label(i), measure[i]);
    }
    write_text(path, &out)
}

/// Reads a measure; states absent from the file carry weight zero.
pub fn read_measure(path: impl AsRef<Path>, space: &StateSpace) -> Result<ProbabilityMeasure> {
    let path = path.as_ref();
    let values = labeled_column(path, &read_text(path)?, "state,weight", space)?;
    ProbabilityMeasure::from_weights(values.into_iter().map(|v| v.unwrap_or(0.0)).collect())
}

/// CSV `state,value` over the whole state space.
pub fn write_observable(
    path: impl AsRef<Path>,
    f: &Observable,
    space: &StateSpace,
) -> Result<()> {
    let mut out = String::from("state,value\n");
    for i in 0..space.len() {
        let _ = writeln!(out, "{},{}", space.label(i), f[i]);
    }
    write_text(path, &out)
}

/// Reads an observable; every state must be present, a defaulted entry
/// in a trial function would be a silent mistake.
pub fn read_observable(path: impl AsRef<Path>, space: &StateSpace) -> Result<Observable> {
    let path = path.as_ref();
    let values = labeled_column(path, &read_text(path)?, "state,value", space)?;
    let mut out = Vec::with_capacity(space.len());
    for (i, v) in values.into_iter().enumerate() {
        match v {
            Some(v) => out.push(v),
            None => {
                return Err(Error::Parse(format!(
                    "{}: state '{}' is missing",
                    path.display(),
                    space.label(i)
                )))
            }
        }
    }
    Ok(Observable::new(out))
}

/// CSV `t,d`: the worst-case total-variation profile.
pub fn write_mixing_profile(path: impl AsRef<Path>, profile: &MixingProfile) -> Result<()> {
    let mut out = String::from("t,d\n");
    for (t, d) in profile.times.iter().zip(&profile.distances) {
        let _ = writeln!(out, "{t},{d}");
    }
    write_text(path, &out)
}

/// CSV `t,label`: segment starts of a well label path.
pub fn write_order_path(path: impl AsRef<Path>, order: &OrderPath) -> Result<()> {
    let mut out = String::from("t,label\n");
    for (t, l) in order.times.iter().zip(&order.labels) {
        let _ = writeln!(out, "{t},{l}");
    }
    write_text(path, &out)
}

/// CSV `t,state`: entry times and state labels of a trajectory.
pub fn write_trajectory(
    path: impl AsRef<Path>,
    traj: &Trajectory,
    space: &StateSpace,
) -> Result<()> {
    let mut out = String::from("t,state\n");
    for (t, &s) in traj.times.iter().zip(&traj.states) {
        let _ = writeln!(out, "{t},{}", space.label(s));
    }
    write_text(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{random_reversible, DogGraph, DogGraphSpec};

    fn dir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn chain_roundtrip_is_exact() {
        let d = dir();
        let path = d.path().join("chain.json");
        let chain = random_reversible(12, 5, 0.6).unwrap();
        write_chain(&path, &chain).unwrap();
        let back = read_chain(&path).unwrap();

        assert_eq!(chain.space().labels(), back.space().labels());
        let a: Vec<_> = chain.rates().iter_entries().collect();
        let b: Vec<_> = back.rates().iter_entries().collect();
        assert_eq!(a, b);
        assert_eq!(chain.pi().as_slice(), back.pi().as_slice());
    }

    #[test]
    fn comma_bearing_labels_survive() {
        let d = dir();
        let g = DogGraph::build(DogGraphSpec { n: 2, d: 2 }).unwrap();
        assert!(g.chain.space().label(0).contains(','));

        let chain_path = d.path().join("dog.json");
        write_chain(&chain_path, &g.chain).unwrap();
        let back = read_chain(&chain_path).unwrap();
        assert_eq!(g.chain.space().labels(), back.space().labels());

        let m_path = d.path().join("pi.csv");
        write_measure(&m_path, g.chain.pi(), g.chain.space()).unwrap();
        let pi = read_measure(&m_path, back.space()).unwrap();
        assert_eq!(pi.as_slice(), g.chain.pi().as_slice());

        let p_path = d.path().join("wells.json");
        let part = g.metastable_partition(Some(0.4)).unwrap();
        write_partition(&p_path, &part, g.chain.space()).unwrap();
        let part_back = read_partition(&p_path, back.space()).unwrap();
        assert_eq!(part.wells(), part_back.wells());
        assert_eq!(part.delta(), part_back.delta());
    }

    #[test]
    fn observable_roundtrip_requires_every_state() {
        let d = dir();
        let chain = random_reversible(6, 9, 0.8).unwrap();
        let path = d.path().join("f.csv");
        let f = Observable::new((0..6).map(|i| (i as f64).sin()).collect());
        write_observable(&path, &f, chain.space()).unwrap();
        assert_eq!(
            read_observable(&path, chain.space()).unwrap().as_slice(),
            f.as_slice()
        );

        let text = fs::read_to_string(&path).unwrap();
        let truncated: Vec<&str> = text.lines().take(4).collect();
        fs::write(&path, truncated.join("\n")).unwrap();
        match read_observable(&path, chain.space()) {
            Err(Error::Parse(msg)) => assert!(msg.contains("missing"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_files_name_the_problem() {
        let d = dir();
        let path = d.path().join("bad.json");

        write_text(&path, "{ \"states\": [\"a\"], \"rates\": ").unwrap();
        assert!(matches!(read_chain(&path), Err(Error::Parse(_))));

        write_text(
            &path,
            "{ \"states\": [\"a\", \"b\"], \"rates\": [[0, 5, 1.0]] }",
        )
        .unwrap();
        match read_chain(&path) {
            Err(Error::Parse(msg)) => assert!(msg.contains("rates[0]"), "{msg}"),
            other => panic!("{other:?}"),
        }

        let chain = random_reversible(4, 1, 0.9).unwrap();
        write_text(
            &path,
            "{ \"wells\": [[\"0\"], [\"nope\"]], \"delta\": \"implicit\" }",
        )
        .unwrap();
        match read_partition(&path, chain.space()) {
            Err(Error::Parse(msg)) => assert!(msg.contains("nope"), "{msg}"),
            other => panic!("{other:?}"),
        }

        write_text(&path, "{ \"wells\": [[\"0\"], [\"1\"]], \"delta\": \"listed\" }").unwrap();
        assert!(matches!(
            read_partition(&path, chain.space()),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn writes_replace_and_leave_no_droppings() {
        let d = dir();
        let path = d.path().join("out.txt");
        write_text(&path, "one\n").unwrap();
        write_text(&path, "two\n").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two\n");
        assert!(!d.path().join("out.txt.tmp").exists());
    }

    #[test]
    fn path_writers_emit_expected_rows() {
        let d = dir();

        let profile = MixingProfile {
            times: vec![0.0, 0.5],
            distances: vec![0.75, 0.25],
        };
        let p = d.path().join("mix.csv");
        write_mixing_profile(&p, &profile).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "t,d\n0,0.75\n0.5,0.25\n");

        let order = OrderPath {
            times: vec![0.0, 1.25],
            labels: vec![1, 0],
            horizon: 2.0,
        };
        let o = d.path().join("order.csv");
        write_order_path(&o, &order).unwrap();
        assert_eq!(fs::read_to_string(&o).unwrap(), "t,label\n0,1\n1.25,0\n");

        let chain = random_reversible(3, 2, 1.0).unwrap();
        let traj = Trajectory {
            times: vec![0.0, 0.5],
            states: vec![2, 0],
            horizon: 1.0,
            init: 2,
            seed: 7,
        };
        let t = d.path().join("traj.csv");
        write_trajectory(&t, &traj, chain.space()).unwrap();
        assert_eq!(fs::read_to_string(&t).unwrap(), "t,state\n0,2\n0.5,0\n");
    }
}
