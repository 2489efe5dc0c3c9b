//! Read-only JSON API over one organization and its lake. The client keeps
//! the navigation path; every response depends only on the loaded files.

use std::collections::BTreeMap;
use std::path::Path as FsPath;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use lakeorg::lake::DataLake;
use lakeorg::organization::{labels, Levels, Organization, StateId, StateKind};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

/// Values shown per attribute.
pub const SAMPLE_VALUES: usize = 20;

pub struct AppState {
    org: Organization,
    /// The whole lake, for table and attribute lookups.
    lake: DataLake,
    labels: BTreeMap<StateId, String>,
    levels: Levels,
    effectiveness: Option<f64>,
}

impl AppState {
    /// `sub` is the part of `lake` the organization covers.
    pub fn new(org: Organization, lake: DataLake, sub: DataLake, effectiveness: Option<f64>) -> lakeorg::Result<Arc<Self>> {
        let labels = labels(&org, &sub)?;
        let levels = org.levels()?;
        Ok(Arc::new(AppState {
            org,
            lake,
            labels,
            levels,
            effectiveness,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrgSummary {
    pub root: u32,
    pub gamma: f64,
    pub n_states: usize,
    pub n_leaves: usize,
    pub n_tags: usize,
    pub n_tables: usize,
    pub n_attributes: usize,
    pub depth: usize,
    pub effectiveness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildSummary {
    pub id: u32,
    pub label: String,
    pub kind: StateKind,
    pub attribute_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableLink {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavNodeView {
    pub id: u32,
    pub label: String,
    pub kind: StateKind,
    /// Length of the shortest path from the root.
    pub level: usize,
    pub attribute_count: usize,
    pub children: Vec<ChildSummary>,
    pub parents: Vec<u32>,
    /// Leaves only: the attribute and its table.
    pub attribute_id: Option<String>,
    pub table: Option<TableLink>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRef {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableView {
    pub id: String,
    pub name: String,
    pub tags: Vec<String>,
    pub attributes: Vec<AttributeRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeView {
    pub id: String,
    pub name: String,
    pub table: TableLink,
    pub tags: Vec<String>,
    pub n_values: usize,
    pub sample_values: Vec<String>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

pub struct NotFound(String);

impl IntoResponse for NotFound {
    fn into_response(self) -> Response {
        (StatusCode::NOT_FOUND, Json(ErrorBody { error: self.0 })).into_response()
    }
}

pub fn router(state: Arc<AppState>, assets: Option<&FsPath>) -> Router {
    let api = Router::new()
        .route("/api/org/summary", get(summary))
        .route("/api/node/{id}", get(node))
        .route("/api/table/{id}", get(table))
        .route("/api/attribute/{id}", get(attribute))
        .fallback(|| async { NotFound("no such endpoint".into()) })
        .with_state(state);
    match assets {
        Some(dir) => Router::new()
            .nest("/api", Router::new().fallback(|| async { NotFound("no such endpoint".into()) }))
            .merge(api)
            .fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub fn summary_of(s: &AppState) -> OrgSummary {
    let org = &s.org;
    OrgSummary {
        root: org.root().0,
        gamma: org.gamma(),
        n_states: org.n_states(),
        n_leaves: org.leaves().count(),
        n_tags: org.state(org.root()).tags.len(),
        n_tables: org
            .organized_attributes()
            .iter()
            .map(|&a| org.universe().attribute_table(a))
            .collect::<std::collections::BTreeSet<_>>()
            .len(),
        n_attributes: org.organized_attributes().len(),
        depth: s.levels.max_level() as usize,
        effectiveness: s.effectiveness,
    }
}

async fn summary(State(s): State<Arc<AppState>>) -> Json<OrgSummary> {
    Json(summary_of(&s))
}

pub fn node_view(s: &AppState, raw: &str) -> Result<NavNodeView, NotFound> {
    let missing = || NotFound(format!("unknown node '{raw}'"));
    let id = raw.parse::<u32>().map(StateId).map_err(|_| missing())?;
    let st = s.org.get(id).ok_or_else(missing)?;
    let label = |c: StateId| s.labels.get(&c).cloned().unwrap_or_default();
    let children = s
        .org
        .ordered_children(id)
        .into_iter()
        .map(|c| {
            let cs = s.org.state(c);
            ChildSummary {
                id: c.0,
                label: label(c),
                kind: cs.kind,
                attribute_count: cs.attributes.len(),
            }
        })
        .collect();
    let (attribute_id, table) = if st.kind == StateKind::Leaf {
        let u = s.org.universe();
        let attr = *st.attributes.iter().next().expect("leaf has an attribute");
        let aid = u.attribute_id(attr).to_string();
        let table = s.lake.attribute_index(&aid).map(|i| {
            let t = &s.lake.tables()[s.lake.table_of(i)];
            TableLink {
                id: t.id.clone(),
                name: t.name.clone(),
            }
        });
        (Some(aid), table)
    } else {
        (None, None)
    };
    Ok(NavNodeView {
        id: id.0,
        label: label(id),
        kind: st.kind,
        level: s.levels.of(id) as usize,
        attribute_count: st.attributes.len(),
        children,
        parents: st.parents.iter().map(|p| p.0).collect(),
        attribute_id,
        table,
    })
}

async fn node(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<NavNodeView>, NotFound> {
    node_view(&s, &id).map(Json)
}

pub fn table_view(s: &AppState, id: &str) -> Result<TableView, NotFound> {
    let t = s.lake.table_index(id).ok_or_else(|| NotFound(format!("unknown table '{id}'")))?;
    let table = &s.lake.tables()[t];
    Ok(TableView {
        id: table.id.clone(),
        name: table.name.clone(),
        tags: table.tags.iter().cloned().collect(),
        attributes: s
            .lake
            .table_attributes(t)
            .map(|i| {
                let a = s.lake.attribute(i);
                AttributeRef {
                    id: a.id.clone(),
                    name: a.name.clone(),
                }
            })
            .collect(),
    })
}

async fn table(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<TableView>, NotFound> {
    table_view(&s, &id).map(Json)
}

pub fn attribute_view(s: &AppState, id: &str) -> Result<AttributeView, NotFound> {
    let i = s
        .lake
        .attribute_index(id)
        .ok_or_else(|| NotFound(format!("unknown attribute '{id}'")))?;
    let a = s.lake.attribute(i);
    let t = &s.lake.tables()[s.lake.table_of(i)];
    Ok(AttributeView {
        id: a.id.clone(),
        name: a.name.clone(),
        table: TableLink {
            id: t.id.clone(),
            name: t.name.clone(),
        },
        tags: a.tags.iter().cloned().collect(),
        n_values: a.values.len(),
        sample_values: a.values.iter().take(SAMPLE_VALUES).cloned().collect(),
    })
}

async fn attribute(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<AttributeView>, NotFound> {
    attribute_view(&s, &id).map(Json)
}
