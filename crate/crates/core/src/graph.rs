//! Bipartite interaction graph and the two collaborative knowledge graphs.
//!
//! The user-side graph points users at the items they interacted with and
//! items at their attributes; the item-side graph points items at users and
//! users at their attributes. Each graph has its own entity vocabulary, and
//! the resolved user/item → entity maps on each graph carry the alignment.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::{self, Write as _};

use crate::error::{Error, Result};

pub type InteractionTypes = BTreeSet<String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub u32);

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: u32, relation: u32, tail: u32) -> Self {
        Triple {
            head: EntityId(head),
            relation: RelationId(relation),
            tail: EntityId(tail),
        }
    }
}

/// One observed user–item interaction, before indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub user: String,
    pub item: String,
    pub types: InteractionTypes,
    pub weight: Option<f64>,
    pub timestamp: Option<i64>,
    /// Source line, when the record came from a file.
    pub line: Option<usize>,
}

impl InteractionRecord {
    pub fn new<I, S>(user: impl Into<String>, item: impl Into<String>, types: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        InteractionRecord {
            user: user.into(),
            item: item.into(),
            types: types.into_iter().map(Into::into).collect(),
            weight: None,
            timestamp: None,
            line: None,
        }
    }
}

/// `(head, relation, tail)` as named in an attribute file.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AttributeTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl AttributeTriple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        AttributeTriple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum IdOrder {
    #[default]
    FirstSeen,
    Sorted,
}

/// Dense string ↔ index map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_insert(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Reassigns ids in lexicographic order.
    fn sort(&mut self) {
        let mut names = std::mem::take(&mut self.names);
        names.sort();
        *self = Vocabulary::default();
        for n in &names {
            self.get_or_insert(n);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteEdge {
    pub user: u32,
    pub item: u32,
    pub types: InteractionTypes,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteGraph {
    users: Vocabulary,
    items: Vocabulary,
    edges: Vec<BipartiteEdge>,
}

impl BipartiteGraph {
    /// Builds the graph with vocabularies assigned in first-seen order.
    pub fn build(records: &[InteractionRecord]) -> Result<Self> {
        Self::build_ordered(records, IdOrder::FirstSeen)
    }

    pub fn build_ordered(records: &[InteractionRecord], order: IdOrder) -> Result<Self> {
        let mut users = Vocabulary::new();
        let mut items = Vocabulary::new();
        for (n, r) in records.iter().enumerate() {
            check_record(r, n)?;
            users.get_or_insert(&r.user);
            items.get_or_insert(&r.item);
        }
        if order == IdOrder::Sorted {
            users.sort();
            items.sort();
        }
        Self::build_with_vocabulary(records, users, items)
    }

    /// Builds edges from `records` over fixed vocabularies, e.g. a training
    /// split indexed against the full catalog.
    pub fn build_with_vocabulary(
        records: &[InteractionRecord],
        users: Vocabulary,
        items: Vocabulary,
    ) -> Result<Self> {
        let mut edges: Vec<BipartiteEdge> = Vec::new();
        let mut seen: HashMap<(u32, u32), usize> = HashMap::new();
        for (n, r) in records.iter().enumerate() {
            check_record(r, n)?;
            let (Some(u), Some(i)) = (users.id(&r.user), items.id(&r.item)) else {
                return Err(Error::Index(format!(
                    "record ({}, {}) is outside the vocabulary",
                    r.user, r.item
                )));
            };
            match seen.get(&(u, i)) {
                Some(&e) => edges[e].types.extend(r.types.iter().cloned()),
                None => {
                    seen.insert((u, i), edges.len());
                    edges.push(BipartiteEdge {
                        user: u,
                        item: i,
                        types: r.types.clone(),
                    });
                }
            }
        }
        Ok(BipartiteGraph { users, items, edges })
    }

    pub fn users(&self) -> &Vocabulary {
        &self.users
    }

    pub fn items(&self) -> &Vocabulary {
        &self.items
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn edges(&self) -> &[BipartiteEdge] {
        &self.edges
    }
}

fn check_record(r: &InteractionRecord, position: usize) -> Result<()> {
    if r.types.is_empty() {
        return Err(Error::Format {
            source_name: "interactions".into(),
            line: r.line.unwrap_or(position + 1),
            message: format!("record ({}, {}) has no interaction type", r.user, r.item),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelationKind {
    Interaction,
    CompositeInteraction,
    UserAttribute,
    ItemAttribute,
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelationKind::Interaction => "interaction",
            RelationKind::CompositeInteraction => "composite-interaction",
            RelationKind::UserAttribute => "user-attribute",
            RelationKind::ItemAttribute => "item-attribute",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationEntry {
    pub kind: RelationKind,
    pub name: String,
    /// Base interaction types, for (composite) interaction relations.
    pub types: Option<InteractionTypes>,
}

/// Lazily allocated relation ids for one graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelationRegistry {
    entries: Vec<RelationEntry>,
    by_types: HashMap<InteractionTypes, RelationId>,
    by_attribute: HashMap<(RelationKind, String), RelationId>,
}

impl RelationRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Id for an interaction type set; single types are plain interaction
    /// relations, larger sets composite ones. Sets compare as sets.
    ///
    /// Panics if `types` is empty.
    pub fn composite_relation(&mut self, types: &InteractionTypes) -> RelationId {
        assert!(!types.is_empty(), "interaction type set must be non-empty");
        if let Some(&id) = self.by_types.get(types) {
            return id;
        }
        let id = RelationId(self.entries.len() as u32);
        let kind = if types.len() == 1 {
            RelationKind::Interaction
        } else {
            RelationKind::CompositeInteraction
        };
        let name = types.iter().cloned().collect::<Vec<_>>().join("+");
        self.entries.push(RelationEntry {
            kind,
            name,
            types: Some(types.clone()),
        });
        self.by_types.insert(types.clone(), id);
        id
    }

    pub fn attribute_relation(&mut self, kind: RelationKind, name: &str) -> RelationId {
        let key = (kind, name.to_owned());
        if let Some(&id) = self.by_attribute.get(&key) {
            return id;
        }
        let id = RelationId(self.entries.len() as u32);
        self.entries.push(RelationEntry {
            kind,
            name: name.to_owned(),
            types: None,
        });
        self.by_attribute.insert(key, id);
        id
    }

    pub fn lookup_types(&self, types: &InteractionTypes) -> Option<RelationId> {
        self.by_types.get(types).copied()
    }

    pub fn entry(&self, id: RelationId) -> Option<&RelationEntry> {
        self.entries.get(id.index())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[RelationEntry] {
        &self.entries
    }
}

/// Links interaction ids to the entity names used in attribute files.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlignmentMap {
    item_alignment: Vec<(String, String)>,
    user_alignment: Vec<(String, String)>,
    entity_to_item: HashMap<String, String>,
    entity_to_user: HashMap<String, String>,
}

impl AlignmentMap {
    pub fn empty() -> Self {
        Self::default()
    }

    /// `items` is the set A of `(item, entity)` pairs and `users` the set B of
    /// `(user, entity)` pairs. Each id and each entity may appear once.
    pub fn new(items: Vec<(String, String)>, users: Vec<(String, String)>) -> Result<Self> {
        let entity_to_item = invert_unique(&items, "item")?;
        let entity_to_user = invert_unique(&users, "user")?;
        Ok(AlignmentMap {
            item_alignment: items,
            user_alignment: users,
            entity_to_item,
            entity_to_user,
        })
    }

    pub fn item_alignment(&self) -> &[(String, String)] {
        &self.item_alignment
    }

    pub fn user_alignment(&self) -> &[(String, String)] {
        &self.user_alignment
    }

    fn item_for(&self, entity: &str) -> Option<&str> {
        self.entity_to_item.get(entity).map(String::as_str)
    }

    fn user_for(&self, entity: &str) -> Option<&str> {
        self.entity_to_user.get(entity).map(String::as_str)
    }

    fn has_item(&self, item: &str) -> bool {
        self.item_alignment.iter().any(|(i, _)| i == item)
    }

    fn has_user(&self, user: &str) -> bool {
        self.user_alignment.iter().any(|(u, _)| u == user)
    }
}

fn invert_unique(pairs: &[(String, String)], what: &str) -> Result<HashMap<String, String>> {
    let mut ids = HashSet::new();
    let mut inverse = HashMap::new();
    for (id, entity) in pairs {
        if !ids.insert(id.as_str()) {
            return Err(Error::Config(format!("{what} {id} is aligned more than once")));
        }
        if inverse.insert(entity.clone(), id.clone()).is_some() {
            return Err(Error::Config(format!(
                "entity {entity} is aligned to more than one {what}"
            )));
        }
    }
    Ok(inverse)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityKey {
    User(String),
    Item(String),
    Attribute(String),
}

impl fmt::Display for EntityKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityKey::User(n) => write!(f, "user:{n}"),
            EntityKey::Item(n) => write!(f, "item:{n}"),
            EntityKey::Attribute(n) => write!(f, "attr:{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Users → items → item attributes.
    User,
    /// Items → users → user attributes.
    Item,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildStats {
    pub interaction_triples: usize,
    pub attribute_triples: usize,
    pub duplicate_attribute_triples: usize,
}

/// Immutable triple store with a CSR neighbor index over heads.
#[derive(Debug, Clone)]
pub struct CollaborativeKG {
    entities: Vec<EntityKey>,
    relations: RelationRegistry,
    triples: Vec<Triple>,
    offsets: Vec<usize>,
    adjacency: Vec<(RelationId, EntityId)>,
    membership: HashSet<Triple>,
    user_entity: Vec<Option<EntityId>>,
    item_entity: Vec<Option<EntityId>>,
    stats: BuildStats,
}

impl CollaborativeKG {
    /// Builds a graph directly from indexed triples. Triples must be in range
    /// and unique.
    pub fn from_triples(
        entities: Vec<EntityKey>,
        relations: RelationRegistry,
        triples: Vec<Triple>,
    ) -> Result<Self> {
        let n = entities.len();
        let mut membership = HashSet::with_capacity(triples.len());
        for (pos, t) in triples.iter().enumerate() {
            if t.head.index() >= n || t.tail.index() >= n || t.relation.index() >= relations.len() {
                return Err(Error::Index(format!(
                    "triple {pos} ({}, {}, {}) outside {n} entities / {} relations",
                    t.head.0,
                    t.relation.0,
                    t.tail.0,
                    relations.len()
                )));
            }
            if !membership.insert(*t) {
                return Err(Error::Config(format!(
                    "duplicate triple ({}, {}, {})",
                    t.head.0, t.relation.0, t.tail.0
                )));
            }
        }
        let mut offsets = vec![0usize; n + 1];
        for t in &triples {
            offsets[t.head.index() + 1] += 1;
        }
        for h in 0..n {
            offsets[h + 1] += offsets[h];
        }
        let mut cursor = offsets.clone();
        let mut adjacency = vec![(RelationId(0), EntityId(0)); triples.len()];
        for t in &triples {
            let slot = &mut cursor[t.head.index()];
            adjacency[*slot] = (t.relation, t.tail);
            *slot += 1;
        }
        Ok(CollaborativeKG {
            entities,
            relations,
            triples,
            offsets,
            adjacency,
            membership,
            user_entity: Vec::new(),
            item_entity: Vec::new(),
            stats: BuildStats::default(),
        })
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn relations(&self) -> &RelationRegistry {
        &self.relations
    }

    pub fn entities(&self) -> &[EntityKey] {
        &self.entities
    }

    pub fn stats(&self) -> BuildStats {
        self.stats
    }

    /// Outgoing `(relation, tail)` pairs of `h` in insertion order.
    pub fn neighbors(&self, h: EntityId) -> Result<&[(RelationId, EntityId)]> {
        if h.index() >= self.entities.len() {
            return Err(Error::Index(format!(
                "entity {} out of range for {} entities",
                h.0,
                self.entities.len()
            )));
        }
        Ok(self.neighbors_unchecked(h.index()))
    }

    pub(crate) fn neighbors_unchecked(&self, h: usize) -> &[(RelationId, EntityId)] {
        &self.adjacency[self.offsets[h]..self.offsets[h + 1]]
    }

    /// Position of `h`'s first neighbor in the flattened adjacency.
    pub(crate) fn neighbor_offset(&self, h: usize) -> usize {
        self.offsets[h]
    }

    pub(crate) fn adjacency(&self) -> &[(RelationId, EntityId)] {
        &self.adjacency
    }

    pub fn contains(&self, h: EntityId, r: RelationId, t: EntityId) -> bool {
        self.membership.contains(&Triple {
            head: h,
            relation: r,
            tail: t,
        })
    }

    /// Entity standing for bipartite user `u` in this graph, if any.
    pub fn user_entity(&self, u: usize) -> Option<EntityId> {
        self.user_entity.get(u).copied().flatten()
    }

    pub fn item_entity(&self, i: usize) -> Option<EntityId> {
        self.item_entity.get(i).copied().flatten()
    }

    /// Canonical text form: entities, relations, then triples, one per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, e) in self.entities.iter().enumerate() {
            let _ = writeln!(out, "E\t{i}\t{e}");
        }
        for (i, r) in self.relations.entries().iter().enumerate() {
            let _ = writeln!(out, "R\t{i}\t{}\t{}", r.kind, r.name);
        }
        for t in &self.triples {
            let _ = writeln!(out, "T\t{}\t{}\t{}", t.head.0, t.relation.0, t.tail.0);
        }
        out
    }
}

/// Users (interaction heads) → items → item attributes.
pub fn build_user_side_ckg(
    bg: &BipartiteGraph,
    item_attrs: &[AttributeTriple],
    align: &AlignmentMap,
) -> Result<CollaborativeKG> {
    build_side(bg, item_attrs, align, Side::User, IdOrder::FirstSeen)
}

/// Items (interaction heads) → users → user attributes.
pub fn build_item_side_ckg(
    bg: &BipartiteGraph,
    user_attrs: &[AttributeTriple],
    align: &AlignmentMap,
) -> Result<CollaborativeKG> {
    build_side(bg, user_attrs, align, Side::Item, IdOrder::FirstSeen)
}

pub fn build_ckg(
    bg: &BipartiteGraph,
    attrs: &[AttributeTriple],
    align: &AlignmentMap,
    side: Side,
    order: IdOrder,
) -> Result<CollaborativeKG> {
    build_side(bg, attrs, align, side, order)
}

fn build_side(
    bg: &BipartiteGraph,
    attrs: &[AttributeTriple],
    align: &AlignmentMap,
    side: Side,
    order: IdOrder,
) -> Result<CollaborativeKG> {
    // Resolve attribute heads before allocating anything.
    let head_vocab = match side {
        Side::User => bg.items(),
        Side::Item => bg.users(),
    };
    let in_align = |name: &str| match side {
        Side::User => align.has_item(name),
        Side::Item => align.has_user(name),
    };
    let aligned_lookup = |entity: &str| match side {
        Side::User => align.item_for(entity),
        Side::Item => align.user_for(entity),
    };
    let mut resolved_heads = Vec::with_capacity(attrs.len());
    let mut unresolved: Vec<String> = Vec::new();
    for a in attrs {
        let name = if head_vocab.id(&a.head).is_some() || in_align(&a.head) {
            Some(a.head.clone())
        } else {
            aligned_lookup(&a.head).map(str::to_owned)
        };
        match name {
            Some(n) => resolved_heads.push(n),
            None => {
                if !unresolved.contains(&a.head) {
                    unresolved.push(a.head.clone());
                }
            }
        }
    }
    if !unresolved.is_empty() {
        return Err(Error::UnresolvedEntity { heads: unresolved });
    }

    let mut keys: Vec<EntityKey> = Vec::new();
    let mut key_index: HashMap<EntityKey, u32> = HashMap::new();
    let mut intern = |key: EntityKey| -> u32 {
        if let Some(&id) = key_index.get(&key) {
            return id;
        }
        let id = keys.len() as u32;
        key_index.insert(key.clone(), id);
        keys.push(key);
        id
    };

    let mut relations = RelationRegistry::new();
    let mut triples: Vec<Triple> = Vec::with_capacity(bg.edges().len() + attrs.len());
    let mut stats = BuildStats::default();

    for e in bg.edges() {
        let user = EntityKey::User(bg.users().name(e.user).unwrap_or_default().to_owned());
        let item = EntityKey::Item(bg.items().name(e.item).unwrap_or_default().to_owned());
        let (h, t) = match side {
            Side::User => (intern(user), intern(item)),
            Side::Item => (intern(item), intern(user)),
        };
        let r = relations.composite_relation(&e.types);
        triples.push(Triple::new(h, r.0, t));
        stats.interaction_triples += 1;
    }

    let attr_kind = match side {
        Side::User => RelationKind::ItemAttribute,
        Side::Item => RelationKind::UserAttribute,
    };
    let mut seen_attr: HashSet<(u32, RelationId, u32)> = HashSet::new();
    for (a, head_name) in attrs.iter().zip(resolved_heads) {
        let head_key = match side {
            Side::User => EntityKey::Item(head_name),
            Side::Item => EntityKey::User(head_name),
        };
        let h = intern(head_key);
        let t = intern(EntityKey::Attribute(a.tail.clone()));
        let r = relations.attribute_relation(attr_kind, &a.relation);
        if !seen_attr.insert((h, r, t)) {
            stats.duplicate_attribute_triples += 1;
            continue;
        }
        triples.push(Triple::new(h, r.0, t));
        stats.attribute_triples += 1;
    }

    if order == IdOrder::Sorted {
        let mut perm: Vec<u32> = (0..keys.len() as u32).collect();
        perm.sort_by(|&a, &b| keys[a as usize].cmp(&keys[b as usize]));
        let mut remap = vec![0u32; keys.len()];
        for (new, &old) in perm.iter().enumerate() {
            remap[old as usize] = new as u32;
        }
        keys = perm.iter().map(|&o| keys[o as usize].clone()).collect();
        for t in &mut triples {
            t.head = EntityId(remap[t.head.index()]);
            t.tail = EntityId(remap[t.tail.index()]);
        }
    }

    let index: HashMap<&EntityKey, u32> = keys.iter().enumerate().map(|(i, k)| (k, i as u32)).collect();
    let user_entity = bg
        .users()
        .names()
        .iter()
        .map(|n| index.get(&EntityKey::User(n.clone())).map(|&e| EntityId(e)))
        .collect();
    let item_entity = bg
        .items()
        .names()
        .iter()
        .map(|n| index.get(&EntityKey::Item(n.clone())).map(|&e| EntityId(e)))
        .collect();
    drop(index);

    let mut kg = CollaborativeKG::from_triples(keys, relations, triples)?;
    kg.user_entity = user_entity;
    kg.item_entity = item_entity;
    kg.stats = stats;
    Ok(kg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(u: &str, i: &str, types: &[&str]) -> InteractionRecord {
        InteractionRecord::new(u, i, types.iter().copied())
    }

    fn set(types: &[&str]) -> InteractionTypes {
        types.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn bipartite_empty_and_singleton() {
        let g = BipartiteGraph::build(&[]).unwrap();
        assert_eq!((g.user_count(), g.item_count(), g.edges().len()), (0, 0, 0));
        let g = BipartiteGraph::build(&[rec("u1", "i1", &["view"])]).unwrap();
        assert_eq!((g.user_count(), g.item_count(), g.edges().len()), (1, 1, 1));
    }

    #[test]
    fn bipartite_merges_duplicate_pairs() {
        let g = BipartiteGraph::build(&[rec("u1", "i1", &["like"]), rec("u1", "i1", &["favorite"])])
            .unwrap();
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.edges()[0].types, set(&["favorite", "like"]));
    }

    #[test]
    fn bipartite_rejects_empty_type_set() {
        let mut r = rec("u1", "i1", &[]);
        r.line = Some(17);
        match BipartiteGraph::build(&[r]) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 17),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bipartite_sorted_order() {
        let g = BipartiteGraph::build_ordered(
            &[rec("u2", "ib", &["v"]), rec("u1", "ia", &["v"])],
            IdOrder::Sorted,
        )
        .unwrap();
        assert_eq!(g.users().names(), &["u1".to_string(), "u2".to_string()]);
        assert_eq!(g.edges()[0].user, 1);
        assert_eq!(g.edges()[0].item, 1);
    }

    #[test]
    fn composite_relation_semantics() {
        let mut reg = RelationRegistry::new();
        let like = reg.composite_relation(&set(&["like"]));
        assert_eq!(like, reg.composite_relation(&set(&["like"])));
        let both = reg.composite_relation(&set(&["like", "favorite"]));
        assert_ne!(like, both);
        assert_eq!(both, reg.composite_relation(&set(&["favorite", "like"])));
        assert_eq!(reg.entry(like).unwrap().kind, RelationKind::Interaction);
        assert_eq!(reg.entry(both).unwrap().kind, RelationKind::CompositeInteraction);
    }

    #[test]
    fn user_side_empty() {
        let bg = BipartiteGraph::build(&[]).unwrap();
        let kg = build_user_side_ckg(&bg, &[], &AlignmentMap::empty()).unwrap();
        assert_eq!(kg.entity_count(), 0);
        assert!(kg.triples().is_empty());
    }

    #[test]
    fn user_side_two_users_one_item() {
        let bg = BipartiteGraph::build(&[rec("u1", "i1", &["view"]), rec("u2", "i1", &["view"])])
            .unwrap();
        let attrs = [AttributeTriple::new("i1", "genre", "g1")];
        let kg = build_user_side_ckg(&bg, &attrs, &AlignmentMap::empty()).unwrap();
        assert_eq!(kg.triples().len(), 3);
        let u1 = kg.user_entity(0).unwrap();
        let u2 = kg.user_entity(1).unwrap();
        let i1 = kg.item_entity(0).unwrap();
        assert_eq!(kg.neighbors(u1).unwrap().len(), 1);
        assert_eq!(kg.neighbors(u2).unwrap().len(), 1);
        assert_eq!(kg.neighbors(i1).unwrap().len(), 1);
        let g1 = kg.neighbors(i1).unwrap()[0].1;
        assert!(kg.neighbors(g1).unwrap().is_empty());
    }

    #[test]
    fn user_side_distinct_composite_relations() {
        let bg = BipartiteGraph::build(&[
            rec("u1", "i1", &["like"]),
            rec("u2", "i1", &["like"]),
            rec("u2", "i1", &["favorite"]),
        ])
        .unwrap();
        let kg = build_user_side_ckg(&bg, &[], &AlignmentMap::empty()).unwrap();
        assert_eq!(kg.relation_count(), 2);
        let rels: HashSet<_> = kg.triples().iter().map(|t| t.relation).collect();
        assert_eq!(rels.len(), 2);
    }

    #[test]
    fn item_side_mirror() {
        let bg = BipartiteGraph::build(&[rec("u1", "i1", &["view"])]).unwrap();
        let attrs = [AttributeTriple::new("u1", "age", "a30")];
        let kg = build_item_side_ckg(&bg, &attrs, &AlignmentMap::empty()).unwrap();
        assert_eq!(kg.triples().len(), 2);
        let i1 = kg.item_entity(0).unwrap();
        let u1 = kg.user_entity(0).unwrap();
        assert_eq!(kg.triples()[0].head, i1);
        assert_eq!(kg.triples()[1].head, u1);
    }

    #[test]
    fn unknown_attribute_head_is_rejected() {
        let bg = BipartiteGraph::build(&[rec("u1", "i1", &["view"])]).unwrap();
        let attrs = [
            AttributeTriple::new("i9", "genre", "g1"),
            AttributeTriple::new("i9", "genre", "g2"),
        ];
        match build_user_side_ckg(&bg, &attrs, &AlignmentMap::empty()) {
            Err(Error::UnresolvedEntity { heads }) => assert_eq!(heads, vec!["i9".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn aligned_entity_names_resolve_to_items() {
        let bg = BipartiteGraph::build(&[rec("u1", "i1", &["view"])]).unwrap();
        let align =
            AlignmentMap::new(vec![("i1".into(), "m.0abc".into())], Vec::new()).unwrap();
        let attrs = [AttributeTriple::new("m.0abc", "genre", "g1")];
        let kg = build_user_side_ckg(&bg, &attrs, &align).unwrap();
        let i1 = kg.item_entity(0).unwrap();
        assert_eq!(kg.neighbors(i1).unwrap().len(), 1);
        assert_eq!(kg.entity_count(), 3);
    }

    #[test]
    fn alignment_rejects_double_mapping() {
        let pairs = vec![("i1".to_string(), "e".to_string()), ("i2".to_string(), "e".to_string())];
        assert!(AlignmentMap::new(pairs, Vec::new()).is_err());
    }

    #[test]
    fn duplicate_attribute_triples_are_counted() {
        let bg = BipartiteGraph::build(&[rec("u1", "i1", &["view"])]).unwrap();
        let attrs = [
            AttributeTriple::new("i1", "genre", "g1"),
            AttributeTriple::new("i1", "genre", "g1"),
        ];
        let kg = build_user_side_ckg(&bg, &attrs, &AlignmentMap::empty()).unwrap();
        assert_eq!(kg.triples().len(), 2);
        assert_eq!(kg.stats().duplicate_attribute_triples, 1);
    }

    #[test]
    fn neighbors_order_and_errors() {
        let kg = CollaborativeKG::from_triples(
            (0..5).map(|i| EntityKey::Attribute(format!("e{i}"))).collect(),
            {
                let mut r = RelationRegistry::new();
                r.attribute_relation(RelationKind::ItemAttribute, "a");
                r.attribute_relation(RelationKind::ItemAttribute, "b");
                r
            },
            vec![
                Triple::new(0, 0, 1),
                Triple::new(2, 0, 1),
                Triple::new(0, 1, 3),
                Triple::new(0, 0, 4),
            ],
        )
        .unwrap();
        let n0 = kg.neighbors(EntityId(0)).unwrap().to_vec();
        assert_eq!(
            n0,
            vec![
                (RelationId(0), EntityId(1)),
                (RelationId(1), EntityId(3)),
                (RelationId(0), EntityId(4))
            ]
        );
        assert_eq!(kg.neighbors(EntityId(0)).unwrap(), n0.as_slice());
        assert!(kg.neighbors(EntityId(1)).unwrap().is_empty());
        assert!(matches!(kg.neighbors(EntityId(5)), Err(Error::Index(_))));
    }

    #[test]
    fn sorted_entity_order_is_lexicographic_by_key() {
        let bg = BipartiteGraph::build(&[rec("u2", "i1", &["v"]), rec("u1", "i2", &["v"])]).unwrap();
        let kg = build_ckg(&bg, &[], &AlignmentMap::empty(), Side::User, IdOrder::Sorted).unwrap();
        let mut sorted = kg.entities().to_vec();
        sorted.sort();
        assert_eq!(kg.entities(), sorted.as_slice());
        assert_eq!(kg.triples().len(), 2);
        // u2 → i1 still holds after relabeling.
        let u2 = kg.user_entity(0).unwrap();
        let i1 = kg.item_entity(0).unwrap();
        assert!(kg.contains(u2, RelationId(0), i1));
    }
}
