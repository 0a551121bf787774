//! File formats, provenance headers and atomic output.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::data::CountDataset;
use crate::error::{Error, Result};
use crate::graph::ArealGraph;
use crate::mcmc::{ParamSummary, PosteriorSummary};
use crate::metrics::SmoothingReport;

/// Config hash and seed stamped on every emitted file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    /// Hashes the canonical text of a config (first 16 hex digits of SHA-256).
    pub fn new(canonical_config: &str, seed: u64) -> Self {
        let digest = Sha256::digest(canonical_config.as_bytes());
        Self {
            config_hash: hex::encode(&digest[..8]),
            seed,
        }
    }

    pub fn header(&self) -> String {
        format!("# mvsmooth config={} seed={}", self.config_hash, self.seed)
    }

    /// Header line followed by a CSV column line.
    pub fn csv(&self, columns: &str) -> String {
        format!("{}\n{columns}\n", self.header())
    }
}

/// Writes through a temporary sibling file and a rename, so readers never
/// see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::input(path, "output path has no file name"))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// How an existing output directory is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputPolicy {
    /// Refuse a non-empty directory.
    Fresh,
    /// Delete the directory contents first.
    Force,
    /// Keep completed job files and skip those jobs.
    Resume,
}

pub fn prepare_output_dir(dir: &Path, policy: OutputPolicy) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Error::OutputConflict(format!(
                "{} exists and is not a directory",
                dir.display()
            )));
        }
        let non_empty = fs::read_dir(dir)?.next().is_some();
        match policy {
            OutputPolicy::Fresh if non_empty => {
                return Err(Error::OutputConflict(format!(
                    "{} already exists and is not empty (use --force to overwrite or --resume to continue)",
                    dir.display()
                )))
            }
            OutputPolicy::Force if non_empty => {
                fs::remove_dir_all(dir)?;
            }
            _ => {}
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::input(path, e.to_string()))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn column_indices(path: &Path, rdr: &mut csv::Reader<fs::File>, want: &[&str]) -> Result<Vec<usize>> {
    let headers = rdr.headers().map_err(|e| Error::input(path, e.to_string()))?.clone();
    want.iter()
        .map(|w| {
            headers
                .iter()
                .position(|h| h == *w)
                .ok_or_else(|| Error::input(path, format!("missing column {w:?}")))
        })
        .collect()
}

/// Resolves an area identifier: a 1-based index or a graph label.
fn resolve_area(path: &Path, line: u64, id: &str, graph: &ArealGraph, labels: &HashMap<&str, usize>) -> Result<usize> {
    if let Ok(k) = id.parse::<usize>() {
        if (1..=graph.num_areas()).contains(&k) {
            return Ok(k - 1);
        }
    }
    labels
        .get(id)
        .copied()
        .ok_or_else(|| Error::input(path, format!("line {line}: unknown area {id:?}")))
}

fn label_index(graph: &ArealGraph) -> HashMap<&str, usize> {
    graph
        .labels()
        .map(|l| l.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect())
        .unwrap_or_default()
}

/// Reads `area,population`; every area must appear exactly once.
pub fn read_population(path: &Path, graph: &ArealGraph) -> Result<Vec<u64>> {
    let mut rdr = reader(path)?;
    let idx = column_indices(path, &mut rdr, &["area", "population"])?;
    let labels = label_index(graph);
    let mut pop = vec![None; graph.num_areas()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::input(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let area = resolve_area(path, line, &rec[idx[0]], graph, &labels)?;
        let n: u64 = rec[idx[1]].parse().map_err(|_| {
            Error::input(
                path,
                format!(
                    "line {line}: population {:?} is not a non-negative integer",
                    &rec[idx[1]]
                ),
            )
        })?;
        if n == 0 {
            return Err(Error::input(
                path,
                format!("line {line}: area {} has zero population", area + 1),
            ));
        }
        if pop[area].replace(n).is_some() {
            return Err(Error::input(path, format!("line {line}: duplicate area {}", area + 1)));
        }
    }
    pop.into_iter()
        .enumerate()
        .map(|(i, n)| n.ok_or_else(|| Error::input(path, format!("area {} has no population", i + 1))))
        .collect()
}

/// Reads `disease,area,count`. Disease identifiers are mapped to dense
/// indices in order of first appearance; the returned list is that mapping.
pub fn read_counts(path: &Path, graph: &ArealGraph) -> Result<(Vec<String>, DMatrix<u64>)> {
    let mut rdr = reader(path)?;
    let idx = column_indices(path, &mut rdr, &["disease", "area", "count"])?;
    let labels = label_index(graph);
    let mut diseases: Vec<String> = Vec::new();
    let mut cells: Vec<(usize, usize, u64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::input(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let d = &rec[idx[0]];
        let j = match diseases.iter().position(|x| x == d) {
            Some(j) => j,
            None => {
                diseases.push(d.to_string());
                diseases.len() - 1
            }
        };
        let area = resolve_area(path, line, &rec[idx[1]], graph, &labels)?;
        let o: u64 = rec[idx[2]].parse().map_err(|_| {
            Error::input(
                path,
                format!("line {line}: count {:?} is not a non-negative integer", &rec[idx[2]]),
            )
        })?;
        cells.push((j, area, o));
    }
    if diseases.is_empty() {
        return Err(Error::input(path, "no count rows"));
    }
    let g = graph.num_areas();
    let mut seen = DMatrix::from_element(diseases.len(), g, false);
    let mut counts = DMatrix::zeros(diseases.len(), g);
    for (j, i, o) in cells {
        if seen[(j, i)] {
            return Err(Error::input(
                path,
                format!("duplicate row for disease {} area {}", diseases[j], i + 1),
            ));
        }
        seen[(j, i)] = true;
        counts[(j, i)] = o;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        let (j, i) = (k % diseases.len(), k / diseases.len());
        return Err(Error::input(
            path,
            format!("missing row for disease {} area {}", diseases[j], i + 1),
        ));
    }
    Ok((diseases, counts))
}

/// Counts and population files joined into a dataset.
pub fn read_dataset(counts: &Path, population: &Path, graph: &ArealGraph) -> Result<(CountDataset, Vec<String>)> {
    let (ids, counts) = read_counts(counts, graph)?;
    let pop = read_population(population, graph)?;
    Ok((CountDataset::new(counts, pop, None)?, ids))
}

/// Reads `disease,area,post_mean_rate` (extra columns ignored) into a J×G
/// matrix with 1-based dense indices.
pub fn read_posterior_rates(path: &Path, diseases: usize, areas: usize) -> Result<DMatrix<f64>> {
    let mut rdr = reader(path)?;
    let idx = column_indices(path, &mut rdr, &["disease", "area", "post_mean_rate"])?;
    let mut out = DMatrix::from_element(diseases, areas, f64::NAN);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::input(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse_index = |s: &str, n: usize| -> Result<usize> {
            s.parse::<usize>()
                .ok()
                .filter(|k| (1..=n).contains(k))
                .map(|k| k - 1)
                .ok_or_else(|| Error::input(path, format!("line {line}: index {s:?} out of range 1..={n}")))
        };
        let j = parse_index(&rec[idx[0]], diseases)?;
        let i = parse_index(&rec[idx[1]], areas)?;
        out[(j, i)] = rec[idx[2]]
            .parse()
            .map_err(|_| Error::input(path, format!("line {line}: bad rate {:?}", &rec[idx[2]])))?;
    }
    if out.iter().any(|v| v.is_nan()) {
        return Err(Error::input(
            path,
            "posterior file does not cover every disease and area",
        ));
    }
    Ok(out)
}

pub const POSTERIOR_COLUMNS: &str = "disease,area,post_mean_rate,lo95,hi95";
pub const HYPER_COLUMNS: &str = "param,post_mean,lo95,hi95,ess,psrf";
pub const COMPONENT_COLUMNS: &str = "disease,area,component";
pub const DATASET_COLUMNS: &str = "replicate,disease,area,count,population,true_rate";

pub fn posterior_csv(summary: &PosteriorSummary, prov: &Provenance) -> String {
    prov.csv(POSTERIOR_COLUMNS) + &posterior_rows(summary)
}

pub fn posterior_rows(summary: &PosteriorSummary) -> String {
    let mut s = String::new();
    let (jn, g) = summary.mean_rates.shape();
    for j in 0..jn {
        for i in 0..g {
            s += &format!(
                "{},{},{},{},{}\n",
                j + 1,
                i + 1,
                summary.mean_rates[(j, i)],
                summary.lo95[(j, i)],
                summary.hi95[(j, i)]
            );
        }
    }
    s
}

pub fn hyper_line(p: &ParamSummary) -> String {
    format!("{},{},{},{},{},{}", p.name, p.mean, p.lo95, p.hi95, p.ess, p.psrf)
}

pub fn hyper_csv(params: &[ParamSummary], prov: &Provenance) -> String {
    let mut s = prov.csv(HYPER_COLUMNS);
    for p in params {
        s += &hyper_line(p);
        s.push('\n');
    }
    s
}

pub fn components_csv(report: &SmoothingReport, prov: &Provenance) -> String {
    let mut s = prov.csv(COMPONENT_COLUMNS);
    let (jn, g) = report.per_area.shape();
    for j in 0..jn {
        for i in 0..g {
            s += &format!("{},{},{}\n", j + 1, i + 1, report.per_area[(j, i)]);
        }
    }
    s
}

/// Rows of the dataset CSV for one replicate.
pub fn dataset_rows(data: &CountDataset) -> String {
    let mut s = String::new();
    for j in 0..data.num_diseases() {
        for i in 0..data.num_areas() {
            let rate = data.true_rates().map(|r| r[(j, i)].to_string()).unwrap_or_default();
            s += &format!(
                "{},{},{},{},{},{}\n",
                data.replicate_id,
                j + 1,
                i + 1,
                data.count(j, i),
                data.population()[i],
                rate
            );
        }
    }
    s
}

/// Loads a GeoJSON FeatureCollection and checks it has one feature per area.
pub fn read_geojson(path: &Path, num_areas: usize) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::input(path, e.to_string()))?;
    let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::input(path, e.to_string()))?;
    let n = doc
        .get("features")
        .and_then(|f| f.as_array())
        .ok_or_else(|| Error::input(path, "not a GeoJSON FeatureCollection"))?
        .len();
    if n != num_areas {
        return Err(Error::input(path, format!("{n} features for {num_areas} areas")));
    }
    Ok(doc)
}

/// Copies the collection and adds `component_<disease>` properties to each
/// feature. A feature's area is its integer `area` property when present,
/// otherwise its position.
pub fn join_components(
    doc: &serde_json::Value,
    report: &SmoothingReport,
    disease_ids: &[String],
) -> Result<serde_json::Value> {
    let mut out = doc.clone();
    let g = report.per_area.ncols();
    let features = out
        .get_mut("features")
        .and_then(|f| f.as_array_mut())
        .ok_or_else(|| Error::Parameter("not a FeatureCollection".into()))?;
    for (pos, feat) in features.iter_mut().enumerate() {
        let area = feat
            .pointer("/properties/area")
            .and_then(|a| a.as_u64())
            .map(|a| a as usize)
            .unwrap_or(pos + 1);
        if !(1..=g).contains(&area) {
            return Err(Error::Parameter(format!(
                "feature {pos} has area {area} outside 1..={g}"
            )));
        }
        let props = feat
            .as_object_mut()
            .ok_or_else(|| Error::Parameter(format!("feature {pos} is not an object")))?
            .entry("properties")
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
        let props = props
            .as_object_mut()
            .ok_or_else(|| Error::Parameter(format!("feature {pos} properties are not an object")))?;
        for (j, id) in disease_ids.iter().enumerate() {
            props.insert(
                format!("component_{id}"),
                serde_json::json!(report.per_area[(j, area - 1)]),
            );
        }
    }
    Ok(out)
}

/// File-name-safe version of an identifier.
pub fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '+' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Serde adapter writing non-finite floats as the strings `NaN`, `inf` and
/// `-inf`, which plain JSON numbers cannot hold.
pub mod nonfinite {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("NaN")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "NaN" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("bad float {other:?}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_format_and_hash() {
        let p = Provenance::new("{}", 7);
        assert_eq!(p.config_hash.len(), 16);
        assert_eq!(p.header(), format!("# mvsmooth config={} seed=7", p.config_hash));
        assert_ne!(Provenance::new("{ }", 7).config_hash, p.config_hash);
    }

    #[test]
    fn output_policies() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("out");
        prepare_output_dir(&out, OutputPolicy::Fresh).unwrap();
        write_atomic(&out.join("a.csv"), "x\n").unwrap();
        assert!(matches!(
            prepare_output_dir(&out, OutputPolicy::Fresh),
            Err(Error::OutputConflict(_))
        ));
        prepare_output_dir(&out, OutputPolicy::Resume).unwrap();
        assert!(out.join("a.csv").exists());
        prepare_output_dir(&out, OutputPolicy::Force).unwrap();
        assert!(!out.join("a.csv").exists());
    }

    #[test]
    fn counts_and_population_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let graph = ArealGraph::lattice(1, 3).unwrap();
        let c = tmp.path().join("c.csv");
        let p = tmp.path().join("p.csv");
        fs::write(
            &c,
            "# comment\ndisease,area,count\nlung,1,3\nlung,2,0\nlung,3,5\ncolon,3,1\ncolon,1,2\ncolon,2,4\n",
        )
        .unwrap();
        fs::write(&p, "area,population\n3,30\n1,10\n2,20\n").unwrap();
        let (data, ids) = read_dataset(&c, &p, &graph).unwrap();
        assert_eq!(ids, ["lung", "colon"]);
        assert_eq!(data.count(1, 1), 4);
        assert_eq!(data.population(), &[10, 20, 30]);

        fs::write(&p, "area,population\n1,10\n2,20\n").unwrap();
        assert!(read_population(&p, &graph).is_err());
        fs::write(&p, "area,population\n1,10\n2,0\n3,1\n").unwrap();
        assert!(read_population(&p, &graph).is_err());
        fs::write(&c, "disease,area,count\nlung,1,3\nlung,1,3\nlung,2,0\nlung,3,5\n").unwrap();
        assert!(read_counts(&c, &graph).is_err());
    }

    #[test]
    fn geojson_feature_count_is_checked() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("m.geojson");
        let doc = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{},"geometry":null},{"type":"Feature","properties":{"area":1},"geometry":null}]}"#;
        fs::write(&path, doc).unwrap();
        assert!(read_geojson(&path, 3).is_err());
        let v = read_geojson(&path, 2).unwrap();
        let report = SmoothingReport {
            diseases: vec![],
            rmss_total: 0.0,
            rsp_sum: 0.0,
            sp: 0.0,
            per_area: DMatrix::from_row_slice(1, 2, &[0.5, 0.25]),
            replicate_id: None,
            multitcv: None,
        };
        let joined = join_components(&v, &report, &["a".to_string()]).unwrap();
        assert_eq!(joined.pointer("/features/0/properties/component_a").unwrap(), 0.5);
        assert_eq!(joined.pointer("/features/1/properties/component_a").unwrap(), 0.5);
    }
}
