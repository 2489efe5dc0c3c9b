//! The lake data model: tables, attributes and the tag → attributes relation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{topic_vector, EmbeddingStore, TopicVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub id: String,
    pub table_id: String,
    pub name: String,
    pub values: BTreeSet<String>,
    pub topic: TopicVector,
    pub tags: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub id: String,
    pub name: String,
    pub attribute_ids: Vec<String>,
    pub tags: BTreeSet<String>,
}

/// One line of the newline-delimited metadata file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataRecord {
    pub table_id: String,
    pub name: String,
    pub csv_path: String,
    pub tags: Vec<String>,
    /// Optional per-column tag lists keyed by column header. Columns listed here
    /// take these tags instead of inheriting every table tag.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attribute_tags: BTreeMap<String, Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct LakeFile {
    tables: Vec<Table>,
    attributes: Vec<Attribute>,
}

/// Tables and attributes of a lake plus the `data(t)` index.
///
/// Attributes are addressed by position (`usize`) internally; positions follow
/// table order then column order, so they are stable for identical inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LakeFile", into = "LakeFile")]
pub struct DataLake {
    tables: Vec<Table>,
    attributes: Vec<Attribute>,
    #[serde(skip)]
    table_pos: HashMap<String, usize>,
    #[serde(skip)]
    attr_pos: HashMap<String, usize>,
    #[serde(skip)]
    attr_table: Vec<usize>,
    #[serde(skip)]
    tag_index: BTreeMap<String, Vec<usize>>,
}

impl TryFrom<LakeFile> for DataLake {
    type Error = Error;

    fn try_from(f: LakeFile) -> Result<Self> {
        DataLake::new(f.tables, f.attributes)
    }
}

impl From<DataLake> for LakeFile {
    fn from(l: DataLake) -> Self {
        LakeFile {
            tables: l.tables,
            attributes: l.attributes,
        }
    }
}

impl DataLake {
    /// Builds a lake and its indexes, checking the model invariants.
    pub fn new(tables: Vec<Table>, attributes: Vec<Attribute>) -> Result<Self> {
        let mut table_pos = HashMap::with_capacity(tables.len());
        for (i, t) in tables.iter().enumerate() {
            if table_pos.insert(t.id.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate table id '{}'", t.id)));
            }
        }
        let mut attr_pos = HashMap::with_capacity(attributes.len());
        let mut attr_table = Vec::with_capacity(attributes.len());
        let mut tag_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, a) in attributes.iter().enumerate() {
            if attr_pos.insert(a.id.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate attribute id '{}'",
                    a.id
                )));
            }
            let t = *table_pos.get(&a.table_id).ok_or_else(|| Error::NotFound {
                kind: "table",
                id: a.table_id.clone(),
            })?;
            if !a.topic.is_covered() {
                return Err(Error::InvalidArgument(format!(
                    "attribute '{}' has no embedding coverage",
                    a.id
                )));
            }
            if let Some(extra) = a.tags.iter().find(|g| !tables[t].tags.contains(*g)) {
                return Err(Error::InvalidArgument(format!(
                    "attribute '{}' carries tag '{extra}' missing from its table",
                    a.id
                )));
            }
            attr_table.push(t);
            for tag in &a.tags {
                tag_index.entry(tag.clone()).or_default().push(i);
            }
        }
        for t in &tables {
            for id in &t.attribute_ids {
                match attr_pos.get(id) {
                    Some(&i) if attributes[i].table_id == t.id => {}
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "table '{}' lists unknown attribute '{id}'",
                            t.id
                        )))
                    }
                }
            }
        }
        Ok(DataLake {
            tables,
            attributes,
            table_pos,
            attr_pos,
            attr_table,
            tag_index,
        })
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn attribute(&self, i: usize) -> &Attribute {
        &self.attributes[i]
    }

    pub fn attribute_index(&self, id: &str) -> Option<usize> {
        self.attr_pos.get(id).copied()
    }

    pub fn table_index(&self, id: &str) -> Option<usize> {
        self.table_pos.get(id).copied()
    }

    pub fn table(&self, id: &str) -> Option<&Table> {
        self.table_index(id).map(|i| &self.tables[i])
    }

    /// Position of the table owning attribute `attr`.
    pub fn table_of(&self, attr: usize) -> usize {
        self.attr_table[attr]
    }

    /// Attribute positions of table `t`.
    pub fn table_attributes(&self, t: usize) -> impl Iterator<Item = usize> + '_ {
        self.tables[t]
            .attribute_ids
            .iter()
            .map(|id| self.attr_pos[id])
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.tag_index.keys().map(String::as_str)
    }

    pub fn n_tags(&self) -> usize {
        self.tag_index.len()
    }

    /// Attribute positions associated with `tag`; empty for unknown tags.
    pub fn tag_members(&self, tag: &str) -> &[usize] {
        self.tag_index.get(tag).map(Vec::as_slice).unwrap_or(&[])
    }

    /// `data(t)`: ids of the attributes associated with `tag`.
    pub fn data_of_tag(&self, tag: &str) -> BTreeSet<&str> {
        self.tag_members(tag)
            .iter()
            .map(|&i| self.attributes[i].id.as_str())
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.attributes.first().map(|a| a.topic.dim()).unwrap_or(0)
    }

    /// Sub-lake holding only attributes tagged with a tag in `tags`; their tag
    /// sets are intersected with `tags`. Tables left without attributes vanish.
    pub fn restrict_to_tags(&self, tags: &BTreeSet<String>) -> DataLake {
        self.filter(|a| {
            let kept: BTreeSet<String> = a.tags.intersection(tags).cloned().collect();
            (!kept.is_empty()).then_some(kept)
        })
    }

    /// Sub-lake containing only the listed tables (tags untouched).
    pub fn select_tables(&self, ids: &BTreeSet<String>) -> DataLake {
        self.filter(|a| ids.contains(&a.table_id).then(|| a.tags.clone()))
    }

    /// The same lake with all tags removed.
    pub fn without_tags(&self) -> DataLake {
        self.filter(|_| Some(BTreeSet::new()))
    }

    /// Keeps attributes for which `keep` returns their new tag set.
    fn filter<F>(&self, mut keep: F) -> DataLake
    where
        F: FnMut(&Attribute) -> Option<BTreeSet<String>>,
    {
        let mut attributes = Vec::new();
        let mut per_table: Vec<Vec<String>> = vec![Vec::new(); self.tables.len()];
        let mut table_tags: Vec<BTreeSet<String>> = vec![BTreeSet::new(); self.tables.len()];
        for (i, a) in self.attributes.iter().enumerate() {
            if let Some(tags) = keep(a) {
                let t = self.attr_table[i];
                per_table[t].push(a.id.clone());
                table_tags[t].extend(tags.iter().cloned());
                attributes.push(Attribute { tags, ..a.clone() });
            }
        }
        let tables = self
            .tables
            .iter()
            .zip(per_table.into_iter().zip(table_tags))
            .filter(|(_, (ids, _))| !ids.is_empty())
            .map(|(t, (attribute_ids, tags))| Table {
                id: t.id.clone(),
                name: t.name.clone(),
                attribute_ids,
                tags,
            })
            .collect();
        DataLake::new(tables, attributes).expect("filtering preserves lake invariants")
    }

    /// Replaces attribute tag sets (by position) and re-derives table tags as the
    /// union of the table's original tags and its attributes' tags.
    pub fn with_added_tags(&self, added: &[BTreeSet<String>]) -> DataLake {
        let mut attributes = self.attributes.clone();
        let mut tables = self.tables.clone();
        for (i, extra) in added.iter().enumerate() {
            if extra.is_empty() {
                continue;
            }
            attributes[i].tags.extend(extra.iter().cloned());
            tables[self.attr_table[i]].tags.extend(extra.iter().cloned());
        }
        DataLake::new(tables, attributes).expect("adding tags preserves lake invariants")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, self)?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IngestOptions {
    /// A column is textual when at least this fraction of its non-empty cells
    /// fails numeric parsing.
    pub text_threshold: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            text_threshold: 0.5,
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct IngestReport {
    pub warnings: Vec<String>,
    pub skipped_tables: usize,
    pub dropped_attributes: usize,
}

/// Reads the metadata file and every referenced CSV into a [`DataLake`].
pub fn ingest(
    tables_dir: &Path,
    metadata: &Path,
    store: &EmbeddingStore,
    options: IngestOptions,
) -> Result<(DataLake, IngestReport)> {
    let records = read_metadata(metadata)?;
    let parsed: Vec<TableOutcome> = records
        .par_iter()
        .map(|r| ingest_table(tables_dir, r, store, options))
        .collect();

    let mut report = IngestReport::default();
    let mut tables = Vec::new();
    let mut attributes = Vec::new();
    for outcome in parsed {
        report.dropped_attributes += outcome.dropped;
        report.warnings.extend(outcome.warnings);
        match outcome.table {
            Some((t, attrs)) => {
                tables.push(t);
                attributes.extend(attrs);
            }
            None => report.skipped_tables += 1,
        }
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok((DataLake::new(tables, attributes)?, report))
}

pub fn read_metadata(path: &Path) -> Result<Vec<MetadataRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

struct TableOutcome {
    table: Option<(Table, Vec<Attribute>)>,
    warnings: Vec<String>,
    dropped: usize,
}

fn ingest_table(
    dir: &Path,
    record: &MetadataRecord,
    store: &EmbeddingStore,
    options: IngestOptions,
) -> TableOutcome {
    let mut out = TableOutcome {
        table: None,
        warnings: Vec::new(),
        dropped: 0,
    };
    let path = dir.join(&record.csv_path);
    let (headers, columns) = match read_columns(&path) {
        Ok(c) => c,
        Err(e) => {
            out.warnings
                .push(format!("table '{}' skipped: {e}", record.table_id));
            return out;
        }
    };
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| record.table_id.clone());

    let mut table_tags: BTreeSet<String> = record.tags.iter().cloned().collect();
    for tags in record.attribute_tags.values() {
        table_tags.extend(tags.iter().cloned());
    }
    let mut attrs = Vec::new();
    for (col, (name, cells)) in headers.iter().zip(columns).enumerate() {
        if !is_textual(&cells, options.text_threshold) {
            continue;
        }
        let values: BTreeSet<String> = cells.into_iter().collect();
        let topic = topic_vector(values.iter().map(String::as_str), store);
        if !topic.is_covered() {
            out.dropped += 1;
            continue;
        }
        let tags = match record.attribute_tags.get(name) {
            Some(t) => t.iter().cloned().collect(),
            None => table_tags.clone(),
        };
        attrs.push(Attribute {
            id: format!("{stem}.{col}"),
            table_id: record.table_id.clone(),
            name: name.clone(),
            values,
            topic,
            tags,
        });
    }
    if attrs.is_empty() {
        out.warnings.push(format!(
            "table '{}' excluded: no textual attribute with embedding coverage",
            record.table_id
        ));
        return out;
    }
    let table = Table {
        id: record.table_id.clone(),
        name: record.name.clone(),
        attribute_ids: attrs.iter().map(|a| a.id.clone()).collect(),
        tags: table_tags,
    };
    out.table = Some((table, attrs));
    out
}

/// Returns headers and, per column, the trimmed non-empty cells.
fn read_columns(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("{other:?}"),
            },
        })?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut columns = vec![Vec::new(); headers.len()];
    for row in reader.records() {
        let row = row?;
        for (col, cell) in row.iter().enumerate().take(headers.len()) {
            let cell = cell.trim();
            if !cell.is_empty() {
                columns[col].push(cell.to_string());
            }
        }
    }
    Ok((headers, columns))
}

fn is_textual(cells: &[String], threshold: f64) -> bool {
    if cells.is_empty() {
        return false;
    }
    let non_numeric = cells.iter().filter(|c| c.parse::<f64>().is_err()).count();
    non_numeric as f64 >= threshold * cells.len() as f64
}

/// Writes a lake as `tables/<table_id>.csv` plus `metadata.jsonl` under `dir`.
///
/// Per-attribute tags are recorded in `attribute_tags` whenever an attribute's
/// tags differ from its table's tags.
pub fn write_lake(lake: &DataLake, dir: &Path) -> Result<()> {
    let tables_dir = dir.join("tables");
    fs::create_dir_all(&tables_dir).map_err(|e| Error::io(&tables_dir, e))?;
    let meta_path = dir.join("metadata.jsonl");
    let meta = File::create(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let mut meta = BufWriter::new(meta);
    for (ti, table) in lake.tables().iter().enumerate() {
        let file_name = format!("{}.csv", table.id);
        let path = tables_dir.join(&file_name);
        let attrs: Vec<&Attribute> = lake.table_attributes(ti).map(|i| lake.attribute(i)).collect();
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(attrs.iter().map(|a| a.name.as_str()))?;
        let columns: Vec<Vec<&str>> = attrs
            .iter()
            .map(|a| a.values.iter().map(String::as_str).collect())
            .collect();
        let rows = columns.iter().map(Vec::len).max().unwrap_or(0);
        for r in 0..rows {
            w.write_record(columns.iter().map(|c| c.get(r).copied().unwrap_or("")))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let attribute_tags = attrs
            .iter()
            .filter(|a| a.tags != table.tags)
            .map(|a| (a.name.clone(), a.tags.iter().cloned().collect()))
            .collect();
        let record = MetadataRecord {
            table_id: table.id.clone(),
            name: table.name.clone(),
            csv_path: file_name,
            tags: table.tags.iter().cloned().collect(),
            attribute_tags,
        };
        serde_json::to_writer(&mut meta, &record)?;
        meta.write_all(b"\n").map_err(|e| Error::io(&meta_path, e))?;
    }
    meta.flush().map_err(|e| Error::io(&meta_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> EmbeddingStore {
        let mut s = EmbeddingStore::new(3);
        s.insert("wheat", &[1.0, 0.0, 0.0]).unwrap();
        s.insert("barley", &[0.9, 0.1, 0.0]).unwrap();
        s.insert("oats", &[0.8, 0.2, 0.0]).unwrap();
        s.insert("salmon", &[0.0, 1.0, 0.0]).unwrap();
        s.insert("cod", &[0.0, 0.9, 0.1]).unwrap();
        s
    }

    fn write(dir: &Path, name: &str, contents: &str) {
        fs::write(dir.join(name), contents).unwrap();
    }

    #[test]
    fn tags_propagate_to_every_text_column() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "grain.csv", "crop,elevator\nwheat,oats\nbarley,wheat\n");
        write(
            dir.path(),
            "meta.jsonl",
            r#"{"table_id":"d3","name":"Grain deliveries","csv_path":"grain.csv","tags":["grains"]}"#,
        );
        let (lake, report) =
            ingest(dir.path(), &dir.path().join("meta.jsonl"), &store(), Default::default())
                .unwrap();
        assert!(report.warnings.is_empty());
        assert_eq!(lake.attributes().len(), 2);
        for a in lake.attributes() {
            assert_eq!(a.tags, BTreeSet::from(["grains".to_string()]));
        }
        assert_eq!(lake.attributes()[0].id, "grain.0");
        assert_eq!(lake.attributes()[1].id, "grain.1");
        assert_eq!(lake.data_of_tag("grains").len(), 2);
    }

    #[test]
    fn numeric_only_table_is_excluded() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "n.csv", "count\n1\n2.5\n3\n");
        write(dir.path(), "g.csv", "crop\nwheat\n");
        write(
            dir.path(),
            "meta.jsonl",
            concat!(
                r#"{"table_id":"n","name":"Numbers","csv_path":"n.csv","tags":["x"]}"#,
                "\n",
                r#"{"table_id":"g","name":"Grain","csv_path":"g.csv","tags":["grains"]}"#,
                "\n"
            ),
        );
        let (lake, report) =
            ingest(dir.path(), &dir.path().join("meta.jsonl"), &store(), Default::default())
                .unwrap();
        assert_eq!(lake.tables().len(), 1);
        assert_eq!(report.skipped_tables, 1);
        assert_eq!(report.warnings.len(), 1);
        assert!(lake.data_of_tag("x").is_empty());
    }

    #[test]
    fn textual_threshold_counts_non_numeric_cells() {
        let cells = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert!(is_textual(&cells(&["a", "1"]), 0.5));
        assert!(!is_textual(&cells(&["a", "1", "2"]), 0.5));
        assert!(!is_textual(&[], 0.5));
    }

    #[test]
    fn missing_csv_is_a_warning_and_bad_metadata_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "meta.jsonl",
            r#"{"table_id":"gone","name":"Gone","csv_path":"gone.csv","tags":["t"]}"#,
        );
        let (lake, report) =
            ingest(dir.path(), &dir.path().join("meta.jsonl"), &store(), Default::default())
                .unwrap();
        assert!(lake.tables().is_empty());
        assert_eq!(report.skipped_tables, 1);

        write(dir.path(), "bad.jsonl", "{not json");
        assert!(matches!(
            ingest(dir.path(), &dir.path().join("bad.jsonl"), &store(), Default::default()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(ingest(dir.path(), &dir.path().join("nope.jsonl"), &store(), Default::default())
            .is_err());
    }

    #[test]
    fn uncovered_columns_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "f.csv", "fish,code\nsalmon,qqq\ncod,zzz\n");
        write(
            dir.path(),
            "meta.jsonl",
            r#"{"table_id":"d6","name":"CFIA Fish List","csv_path":"f.csv","tags":["fisheries"]}"#,
        );
        let (lake, report) =
            ingest(dir.path(), &dir.path().join("meta.jsonl"), &store(), Default::default())
                .unwrap();
        assert_eq!(lake.attributes().len(), 1);
        assert_eq!(report.dropped_attributes, 1);
        assert!(lake.attributes().iter().all(|a| a.topic.is_covered()));
    }

    #[test]
    fn per_column_tags_override_table_tags() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "m.csv", "crop,fish\nwheat,salmon\n");
        write(
            dir.path(),
            "meta.jsonl",
            r#"{"table_id":"m","name":"Mixed","csv_path":"m.csv","tags":["grains","fisheries"],"attribute_tags":{"fish":["fisheries"]}}"#,
        );
        let (lake, _) =
            ingest(dir.path(), &dir.path().join("meta.jsonl"), &store(), Default::default())
                .unwrap();
        assert_eq!(lake.data_of_tag("grains"), BTreeSet::from(["m.0"]));
        assert_eq!(lake.data_of_tag("fisheries"), BTreeSet::from(["m.0", "m.1"]));
    }

    #[test]
    fn data_of_tag_lookup() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "x,y,z\nwheat,oats,barley\n");
        write(
            dir.path(),
            "meta.jsonl",
            r#"{"table_id":"a","name":"A","csv_path":"a.csv","tags":["grains"]}"#,
        );
        let (lake, _) =
            ingest(dir.path(), &dir.path().join("meta.jsonl"), &store(), Default::default())
                .unwrap();
        assert_eq!(lake.data_of_tag("grains").len(), 3);
        assert!(lake.data_of_tag("unknown").is_empty());
        let assoc: usize = lake.tags().map(|t| lake.data_of_tag(t).len()).sum();
        let total: usize = lake.attributes().iter().map(|a| a.tags.len()).sum();
        assert_eq!(assoc, total);
    }

    #[test]
    fn lake_rejects_attribute_tags_outside_table() {
        let a = Attribute {
            id: "t.0".into(),
            table_id: "t".into(),
            name: "c".into(),
            values: BTreeSet::from(["wheat".to_string()]),
            topic: TopicVector {
                mean: vec![1.0, 0.0, 0.0],
                support: 1,
            },
            tags: BTreeSet::from(["other".to_string()]),
        };
        let t = Table {
            id: "t".into(),
            name: "T".into(),
            attribute_ids: vec!["t.0".into()],
            tags: BTreeSet::new(),
        };
        assert!(DataLake::new(vec![t], vec![a]).is_err());
    }
}
