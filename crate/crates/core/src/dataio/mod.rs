//! Trajectory records, file formats and dataset splitting.
//!
//! Trajectories are newline-delimited JSON, one object per line:
//!
//! ```text
//! {"head": {"distance": 2300.0, "simple_eta": 310.0, "time_slice": 8, "driver_id": 3, "day_of_week": 2},
//!  "conditions": {"weather": 1, "temperature": 21.5, "t": 8},
//!  "links": [{"link_id": 4, "status": 0, "link_time": 41.0, "link_ratio": 0.6}, ...],
//!  "crossings": [{"crossing_id": 5, "cross_time": 12.0}, ...],
//!  "actual_time": 333.0}
//! ```
//!
//! Links and crossings may additionally carry `extra_cat` / `extra_num`
//! objects mapping feature names to values. Categorical cardinalities come
//! from a separate JSON manifest (see [`load_manifest`]); extra categorical
//! features are declared there as `link.<name>` or `crossing.<name>`.

mod synthetic;

pub use synthetic::{generate_synthetic, GeneratorTruth, SyntheticConfig, SyntheticMode, SyntheticWorld};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roadgraph::RoadNetwork;

pub const LINK_ID: &str = "link_id";
pub const STATUS: &str = "status";
pub const CROSSING_ID: &str = "crossing_id";
pub const TIME_SLICE: &str = "time_slice";
pub const DRIVER_ID: &str = "driver_id";
pub const DAY_OF_WEEK: &str = "day_of_week";
pub const WEATHER: &str = "weather";

/// Categorical feature name → vocabulary size.
pub type Cardinalities = BTreeMap<String, usize>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub link_id: usize,
    #[serde(rename = "status")]
    pub link_current_status: usize,
    pub link_time: f64,
    pub link_ratio: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra_cat: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra_num: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingRecord {
    pub crossing_id: usize,
    pub cross_time: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra_cat: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra_num: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadRecord {
    /// Meters.
    pub distance: f64,
    /// Seconds.
    pub simple_eta: f64,
    #[serde(rename = "time_slice")]
    pub departure_time_slice: usize,
    pub driver_id: usize,
    pub day_of_week: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conditions {
    pub weather: usize,
    /// Degrees Celsius.
    pub temperature: f64,
    #[serde(rename = "t")]
    pub time_interval: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub head: HeadRecord,
    pub conditions: Conditions,
    pub links: Vec<LinkRecord>,
    #[serde(default)]
    pub crossings: Vec<CrossingRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actual_time: Option<f64>,
}

impl Trajectory {
    pub fn total_link_time(&self) -> f64 {
        self.links.iter().map(|l| l.link_time).sum()
    }

    pub fn total_cross_time(&self) -> f64 {
        self.crossings.iter().map(|c| c.cross_time).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub cardinalities: Cardinalities,
}

impl Dataset {
    /// A dataset whose cardinalities are the smallest ones its contents fit.
    pub fn from_trajectories(trajectories: Vec<Trajectory>) -> Self {
        let mut card = Cardinalities::new();
        let mut bump = |k: &str, v: usize| {
            let e = card.entry(k.to_string()).or_insert(0);
            *e = (*e).max(v + 1);
        };
        for t in &trajectories {
            bump(TIME_SLICE, t.head.departure_time_slice);
            bump(DRIVER_ID, t.head.driver_id);
            bump(WEATHER, t.conditions.weather);
            for l in &t.links {
                bump(LINK_ID, l.link_id);
                bump(STATUS, l.link_current_status);
                for (k, &v) in &l.extra_cat {
                    bump(&format!("link.{k}"), v);
                }
            }
            for c in &t.crossings {
                bump(CROSSING_ID, c.crossing_id);
                for (k, &v) in &c.extra_cat {
                    bump(&format!("crossing.{k}"), v);
                }
            }
        }
        card.insert(DAY_OF_WEEK.to_string(), 7);
        for key in [LINK_ID, STATUS, CROSSING_ID, TIME_SLICE, DRIVER_ID, WEATHER] {
            card.entry(key.to_string()).or_insert(1);
        }
        Self {
            trajectories,
            cardinalities: card,
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// The trajectories at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            trajectories: indices.iter().map(|&i| self.trajectories[i].clone()).collect(),
            cardinalities: self.cardinalities.clone(),
        }
    }

    pub fn cardinality(&self, feature: &str) -> Result<usize> {
        self.cardinalities
            .get(feature)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("feature `{feature}` has no declared cardinality")))
    }

    /// Validates every record; errors report 1-based positions as lines.
    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.trajectories.iter().enumerate() {
            validate_trajectory(t, &self.cardinalities, i + 1)?;
        }
        Ok(())
    }

    /// Checks that consecutive links are joined by an edge of `network`.
    pub fn validate_against(&self, network: &RoadNetwork) -> Result<()> {
        for (i, t) in self.trajectories.iter().enumerate() {
            for l in &t.links {
                if network.index_of(l.link_id).is_none() {
                    return Err(invalid(i + 1, "link_id", format!("link {} not in road network", l.link_id)));
                }
            }
            for w in t.links.windows(2) {
                if !network.has_edge(w[0].link_id, w[1].link_id) {
                    return Err(invalid(
                        i + 1,
                        "links",
                        format!("links {} -> {} are not adjacent", w[0].link_id, w[1].link_id),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.trajectories {
            let line = serde_json::to_string(t).expect("trajectory serializes");
            let _ = writeln!(out, "{line}");
        }
        out
    }
}

fn invalid(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Validation {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn check_index(card: &Cardinalities, key: &str, value: usize, line: usize, field: &str) -> Result<()> {
    let limit = card
        .get(key)
        .ok_or_else(|| invalid(line, field, format!("no cardinality declared for `{key}`")))?;
    if value >= *limit {
        return Err(invalid(line, field, format!("index {value} ≥ cardinality {limit}")));
    }
    Ok(())
}

fn check_nonnegative(value: f64, line: usize, field: &str) -> Result<()> {
    if !value.is_finite() || value < 0.0 {
        return Err(invalid(line, field, format!("expected a nonnegative number, got {value}")));
    }
    Ok(())
}

fn check_extras(
    prefix: &str,
    cats: &BTreeMap<String, usize>,
    nums: &BTreeMap<String, f64>,
    card: &Cardinalities,
    line: usize,
) -> Result<()> {
    for (name, &v) in cats {
        let key = format!("{prefix}.{name}");
        check_index(card, &key, v, line, &key)?;
    }
    for (name, v) in nums {
        if !v.is_finite() {
            return Err(invalid(line, &format!("{prefix}.{name}"), "non-finite value"));
        }
    }
    Ok(())
}

pub fn validate_trajectory(t: &Trajectory, card: &Cardinalities, line: usize) -> Result<()> {
    if t.links.is_empty() {
        return Err(invalid(line, "links", "trajectory has no links"));
    }
    for l in &t.links {
        check_index(card, LINK_ID, l.link_id, line, "link_id")?;
        check_index(card, STATUS, l.link_current_status, line, "status")?;
        check_nonnegative(l.link_time, line, "link_time")?;
        if !(0.0..=1.0).contains(&l.link_ratio) {
            return Err(invalid(line, "link_ratio", format!("{} outside [0, 1]", l.link_ratio)));
        }
        check_extras("link", &l.extra_cat, &l.extra_num, card, line)?;
    }
    for c in &t.crossings {
        check_index(card, CROSSING_ID, c.crossing_id, line, "crossing_id")?;
        check_nonnegative(c.cross_time, line, "cross_time")?;
        check_extras("crossing", &c.extra_cat, &c.extra_num, card, line)?;
    }
    let h = &t.head;
    if !(h.distance.is_finite() && h.distance > 0.0) {
        return Err(invalid(line, "distance", format!("expected a positive distance, got {}", h.distance)));
    }
    check_nonnegative(h.simple_eta, line, "simple_eta")?;
    check_index(card, TIME_SLICE, h.departure_time_slice, line, "time_slice")?;
    check_index(card, DRIVER_ID, h.driver_id, line, "driver_id")?;
    check_index(card, DAY_OF_WEEK, h.day_of_week, line, "day_of_week")?;
    if h.day_of_week > 6 {
        return Err(invalid(line, "day_of_week", format!("{} outside 0..=6", h.day_of_week)));
    }
    check_index(card, WEATHER, t.conditions.weather, line, "weather")?;
    if !t.conditions.temperature.is_finite() {
        return Err(invalid(line, "temperature", "non-finite temperature"));
    }
    if let Some(ata) = t.actual_time {
        if !(ata.is_finite() && ata > 0.0) {
            return Err(invalid(line, "actual_time", format!("expected a positive time, got {ata}")));
        }
    }
    Ok(())
}

/// Reads a `src_link,dst_link[,attr...]` CSV.
pub fn parse_road_network(path: &Path) -> Result<RoadNetwork> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_road_network_str(&text)
}

pub fn parse_road_network_str(text: &str) -> Result<RoadNetwork> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if headers.len() < 2 || &headers[0] != "src_link" || &headers[1] != "dst_link" {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `src_link,dst_link[,...]`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let attr_names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
    let mut edges = Vec::new();
    let mut attrs = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let id = |k: usize| -> Result<usize> {
            record[k].parse::<usize>().map_err(|_| Error::Parse {
                line,
                message: format!("`{}` is not a link id", &record[k]),
            })
        };
        let (a, b) = (id(0)?, id(1)?);
        edges.push((a, b));
        if !attr_names.is_empty() {
            attrs.insert((a, b), record.iter().skip(2).map(str::to_string).collect());
        }
    }
    let mut net = RoadNetwork::from_edges(edges);
    net.set_attributes(attr_names, attrs);
    Ok(net)
}

pub fn road_network_to_csv(network: &RoadNetwork) -> String {
    let mut out = String::from("src_link,dst_link");
    for name in network.attribute_names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (a, b) in network.edges() {
        let _ = write!(out, "{a},{b}");
        if let Some(values) = network.edge_attributes(a, b) {
            for v in values {
                out.push(',');
                out.push_str(v);
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_road_network(path: &Path, network: &RoadNetwork) -> Result<()> {
    std::fs::write(path, road_network_to_csv(network)).map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: &Path) -> Result<Cardinalities> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("manifest {}: {e}", path.display()),
    })
}

pub fn write_manifest(path: &Path, cardinalities: &Cardinalities) -> Result<()> {
    let text = serde_json::to_string_pretty(cardinalities).expect("manifest serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Parses newline-delimited trajectories and validates them against
/// `cardinalities`. Lines are decoded in parallel; order is preserved.
pub fn parse_trajectories(path: &Path, cardinalities: &Cardinalities) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    parse_trajectory_lines(&lines, cardinalities)
}

pub fn parse_trajectories_str(text: &str, cardinalities: &Cardinalities) -> Result<Dataset> {
    let lines: Vec<String> = text.lines().map(str::to_string).collect();
    parse_trajectory_lines(&lines, cardinalities)
}

fn parse_trajectory_lines(lines: &[String], cardinalities: &Cardinalities) -> Result<Dataset> {
    let parsed: Vec<Option<Trajectory>> = lines
        .par_iter()
        .enumerate()
        .map(|(i, line)| {
            if line.trim().is_empty() {
                return Ok(None);
            }
            let t: Trajectory = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            validate_trajectory(&t, cardinalities, i + 1)?;
            Ok(Some(t))
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        trajectories: parsed.into_iter().flatten().collect(),
        cardinalities: cardinalities.clone(),
    })
}

pub fn write_trajectories(path: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::write(path, dataset.to_jsonl()).map_err(|e| Error::io(path, e))
}

/// Seeded shuffle of `0..n`, cut into `⌊n·f⌋` and `n − ⌊n·f⌋` indices.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    if n == 0 {
        return Err(Error::Contract("cannot split an empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (n as f64 * train_fraction).floor() as usize;
    let test = order.split_off(cut);
    Ok((order, test))
}

pub fn split_dataset(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(dataset.len(), train_fraction, seed)?;
    Ok((dataset.subset(&train), dataset.subset(&test)))
}


#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> Cardinalities {
        [
            (LINK_ID, 10),
            (STATUS, 4),
            (CROSSING_ID, 10),
            (TIME_SLICE, 24),
            (DRIVER_ID, 5),
            (DAY_OF_WEEK, 7),
            (WEATHER, 3),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    const LINE: &str = r#"{"head":{"distance":800.0,"simple_eta":250.0,"time_slice":3,"driver_id":1,"day_of_week":2},"conditions":{"weather":1,"temperature":18.5,"t":3},"links":[{"link_id":1,"status":0,"link_time":100.0,"link_ratio":0.5},{"link_id":2,"status":1,"link_time":120.0,"link_ratio":1.0}],"crossings":[{"crossing_id":2,"cross_time":30.0}],"actual_time":300.0}"#;

    #[test]
    fn network_readback() {
        let net = parse_road_network_str("src_link,dst_link\n1,2\n2,3\n").unwrap();
        assert_eq!((net.node_count(), net.edge_count()), (3, 2));
    }

    #[test]
    fn network_header_only_is_empty() {
        let net = parse_road_network_str("src_link,dst_link\n").unwrap();
        assert_eq!((net.node_count(), net.edge_count()), (0, 0));
    }

    #[test]
    fn network_dedups_edges() {
        let net = parse_road_network_str("src_link,dst_link\n1,2\n1,2\n").unwrap();
        assert_eq!((net.node_count(), net.edge_count()), (2, 1));
    }

    #[test]
    fn network_malformed_row_names_line() {
        let err = parse_road_network_str("src_link,dst_link\n1,2\n2,x\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn network_self_loop_is_flagged() {
        let net = parse_road_network_str("src_link,dst_link\n4,4\n").unwrap();
        assert!(net.has_self_loop_warning());
        assert_eq!(net.edge_count(), 1);
    }

    #[test]
    fn network_attributes_roundtrip() {
        let text = "src_link,dst_link,length\n1,2,350\n2,3,120\n";
        let net = parse_road_network_str(text).unwrap();
        assert_eq!(net.attribute_names(), &["length".to_string()]);
        assert_eq!(net.edge_attributes(2, 3), Some(&["120".to_string()][..]));
        assert_eq!(road_network_to_csv(&net), text);
    }

    #[test]
    fn trajectory_readback() {
        let ds = parse_trajectories_str(LINE, &manifest()).unwrap();
        assert_eq!(ds.len(), 1);
        let t = &ds.trajectories[0];
        assert_eq!((t.links.len(), t.crossings.len()), (2, 1));
        assert_eq!(t.actual_time, Some(300.0));
        assert_eq!(t.links[1].link_current_status, 1);
        assert_eq!(t.head.departure_time_slice, 3);
    }

    #[test]
    fn ratio_out_of_range_is_rejected() {
        let bad = LINE.replace("\"link_ratio\":0.5", "\"link_ratio\":1.5");
        match parse_trajectories_str(&bad, &manifest()).unwrap_err() {
            Error::Validation { field, line, .. } => {
                assert_eq!(field, "link_ratio");
                assert_eq!(line, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn index_over_cardinality_names_field_and_line() {
        let text = format!("{LINE}\n{}", LINE.replace("\"driver_id\":1", "\"driver_id\":5"));
        match parse_trajectories_str(&text, &manifest()).unwrap_err() {
            Error::Validation { field, line, .. } => {
                assert_eq!(field, "driver_id");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_link_time_is_rejected() {
        let bad = LINE.replace("\"link_time\":100.0", "\"link_time\":-1.0");
        assert!(matches!(
            parse_trajectories_str(&bad, &manifest()),
            Err(Error::Validation { ref field, .. }) if field == "link_time"
        ));
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(parse_trajectories_str("{", &manifest()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn extra_features_need_declared_cardinality() {
        let with_extra = LINE.replace("\"link_ratio\":0.5", "\"link_ratio\":0.5,\"extra_cat\":{\"lanes\":2}");
        assert!(parse_trajectories_str(&with_extra, &manifest()).is_err());
        let mut card = manifest();
        card.insert("link.lanes".into(), 4);
        let ds = parse_trajectories_str(&with_extra, &card).unwrap();
        assert_eq!(ds.trajectories[0].links[0].extra_cat["lanes"], 2);
    }

    #[test]
    fn jsonl_roundtrip() {
        let ds = parse_trajectories_str(LINE, &manifest()).unwrap();
        let again = parse_trajectories_str(&ds.to_jsonl(), &manifest()).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn adjacency_validation() {
        let net = RoadNetwork::from_edges([(1, 2)]);
        let ds = parse_trajectories_str(LINE, &manifest()).unwrap();
        ds.validate_against(&net).unwrap();
        let reversed = RoadNetwork::from_edges([(2, 1)]);
        assert!(ds.validate_against(&reversed).is_err());
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let (a, b) = split_indices(10, 0.8, 1).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let (a, b) = split_indices(1, 0.5, 1).unwrap();
        assert_eq!((a.len(), b.len()), (0, 1));
    }

    #[test]
    fn split_is_seeded() {
        assert_eq!(split_indices(50, 0.3, 9).unwrap(), split_indices(50, 0.3, 9).unwrap());
        assert_ne!(split_indices(50, 0.3, 9).unwrap(), split_indices(50, 0.3, 10).unwrap());
    }

    #[test]
    fn split_rejects_bad_fraction() {
        for f in [0.0, 1.0, -0.1, 1.5] {
            assert!(matches!(split_indices(10, f, 0), Err(Error::Config(_))));
        }
    }
}
