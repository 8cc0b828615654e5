//! Knowledge base of named entities.
//!
//! Entities are stored sorted by `entity_id` so that iteration order, and
//! everything derived from it (index rows, tie-breaking), is reproducible.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub entity_id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Reference to the single image describing the entity.
    #[serde(rename = "image", default)]
    pub image_ref: Option<String>,
}

impl Entity {
    pub fn has_image(&self) -> bool {
        self.image_ref.as_deref().is_some_and(|s| !s.is_empty())
    }

    pub fn has_description(&self) -> bool {
        !self.description.trim().is_empty()
    }

    fn validate(&self) -> Result<()> {
        if !self.has_image() && !self.has_description() {
            return Err(Error::EmptyEntity(self.entity_id.clone()));
        }
        Ok(())
    }
}

/// An immutable, id-sorted collection of entities.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KnowledgeBase {
    entities: Vec<Entity>,
    by_id: HashMap<String, usize>,
}

impl KnowledgeBase {
    /// Builds a knowledge base, rejecting duplicate ids and entities without
    /// any content. Input order does not matter.
    pub fn new(mut entities: Vec<Entity>) -> Result<Self> {
        entities.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));
        for pair in entities.windows(2) {
            if pair[0].entity_id == pair[1].entity_id {
                return Err(Error::DuplicateEntity(pair[0].entity_id.clone()));
            }
        }
        for e in &entities {
            e.validate()?;
        }
        let by_id = entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.entity_id.clone(), i))
            .collect();
        Ok(Self { entities, by_id })
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Entity> {
        self.entities.iter()
    }

    pub fn get(&self, entity_id: &str) -> Option<&Entity> {
        self.by_id.get(entity_id).map(|&i| &self.entities[i])
    }

    pub fn contains(&self, entity_id: &str) -> bool {
        self.by_id.contains_key(entity_id)
    }
}

impl<'a> IntoIterator for &'a KnowledgeBase {
    type Item = &'a Entity;
    type IntoIter = std::slice::Iter<'a, Entity>;

    fn into_iter(self) -> Self::IntoIter {
        self.entities.iter()
    }
}

/// Reads a JSONL knowledge base, one entity record per line.
pub fn load_kb(path: impl AsRef<Path>) -> Result<KnowledgeBase> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entities = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entity: Entity = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{}:{}", path.display(), lineno + 1), e))?;
        entities.push(entity);
    }
    KnowledgeBase::new(entities)
}

pub fn save_kb(kb: &KnowledgeBase, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in kb {
        let line = serde_json::to_string(e).expect("entity serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ent(id: &str, desc: &str, image: Option<&str>) -> Entity {
        Entity {
            entity_id: id.into(),
            name: format!("name {id}"),
            description: desc.into(),
            image_ref: image.map(str::to_string),
        }
    }

    #[test]
    fn sorted_by_id_regardless_of_input_order() {
        let kb = KnowledgeBase::new(vec![
            ent("Q3", "c", None),
            ent("Q1", "a", None),
            ent("Q2", "", Some("img.png")),
        ])
        .unwrap();
        let ids: Vec<_> = kb.iter().map(|e| e.entity_id.as_str()).collect();
        assert_eq!(ids, ["Q1", "Q2", "Q3"]);
        assert_eq!(kb.get("Q2").unwrap().description, "");
    }

    #[test]
    fn duplicate_id_is_named() {
        let err = KnowledgeBase::new(vec![ent("Q1", "a", None), ent("Q1", "b", None)]).unwrap_err();
        assert_eq!(err.to_string(), "duplicate entity Q1");
    }

    #[test]
    fn entity_needs_image_or_description() {
        let err = KnowledgeBase::new(vec![ent("Q9", "  ", None)]).unwrap_err();
        assert!(matches!(err, Error::EmptyEntity(id) if id == "Q9"));
    }

    #[test]
    fn load_from_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.jsonl");
        std::fs::write(
            &path,
            concat!(
                "{\"entity_id\":\"b\",\"name\":\"B\",\"description\":\"bee\",\"image\":null}\n",
                "{\"entity_id\":\"a\",\"name\":\"A\",\"description\":\"\",\"image\":\"a.png\"}\n",
                "{\"entity_id\":\"c\",\"name\":\"C\",\"description\":\"sea\",\"image\":\"c.png\"}\n",
            ),
        )
        .unwrap();
        let kb = load_kb(&path).unwrap();
        assert_eq!(kb.len(), 3);
        assert_eq!(kb.entities()[0].entity_id, "a");
        assert_eq!(kb.get("a").unwrap().image_ref.as_deref(), Some("a.png"));

        let out = dir.path().join("kb2.jsonl");
        save_kb(&kb, &out).unwrap();
        assert_eq!(load_kb(&out).unwrap(), kb);
    }

    #[test]
    fn load_reports_duplicate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.jsonl");
        let rec = "{\"entity_id\":\"Q1\",\"name\":\"A\",\"description\":\"x\",\"image\":null}\n";
        std::fs::write(&path, format!("{rec}{rec}")).unwrap();
        assert_eq!(load_kb(&path).unwrap_err().to_string(), "duplicate entity Q1");
    }
}
