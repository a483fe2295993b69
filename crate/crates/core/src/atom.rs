//! Ground atoms, object identifiers and action instances shared by every
//! layer of the stack.

use std::fmt;

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize};

/// Name of a physical object or tool in the workcell.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(String);

impl ObjectId {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ObjectId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// A predicate applied to concrete objects, e.g. `hold(gripper, gear1)`.
///
/// Serialized as `{"pred": .., "args": [..]}`. Deserialization also accepts
/// the compact string form `"hold(gripper, gear1)"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Atom {
    pub pred: String,
    pub args: Vec<ObjectId>,
}

impl Atom {
    pub fn new<I, O>(pred: impl Into<String>, args: I) -> Self
    where
        I: IntoIterator<Item = O>,
        O: Into<ObjectId>,
    {
        Self {
            pred: pred.into(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }

    pub fn unary(pred: impl Into<String>, a: impl Into<ObjectId>) -> Self {
        Self {
            pred: pred.into(),
            args: vec![a.into()],
        }
    }

    pub fn binary(pred: impl Into<String>, a: impl Into<ObjectId>, b: impl Into<ObjectId>) -> Self {
        Self {
            pred: pred.into(),
            args: vec![a.into(), b.into()],
        }
    }

    pub fn mentions(&self, object: &ObjectId) -> bool {
        self.args.iter().any(|a| a == object)
    }

    /// Parses the compact `pred(a, b)` form.
    pub fn parse(text: &str) -> Result<Self, String> {
        parse_call(text).map(|(pred, args)| Atom { pred, args })
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_call(f, &self.pred, &self.args)
    }
}

/// An action symbol applied to an ordered argument list, e.g.
/// `insert(gripper, gear1, shaft1)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ActionInstance {
    pub name: String,
    pub args: Vec<ObjectId>,
}

impl ActionInstance {
    pub fn new<I, O>(name: impl Into<String>, args: I) -> Self
    where
        I: IntoIterator<Item = O>,
        O: Into<ObjectId>,
    {
        Self {
            name: name.into(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }

    pub fn involves(&self, object: &ObjectId) -> bool {
        self.args.iter().any(|a| a == object)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        parse_call(text).map(|(name, args)| ActionInstance { name, args })
    }
}

impl fmt::Display for ActionInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_call(f, &self.name, &self.args)
    }
}

fn write_call(f: &mut fmt::Formatter<'_>, head: &str, args: &[ObjectId]) -> fmt::Result {
    write!(f, "{head}(")?;
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        f.write_str(a.as_str())?;
    }
    f.write_str(")")
}

fn parse_call(text: &str) -> Result<(String, Vec<ObjectId>), String> {
    let text = text.trim();
    let open = text
        .find('(')
        .ok_or_else(|| format!("expected `name(args)`, got {text:?}"))?;
    if !text.ends_with(')') {
        return Err(format!("missing closing parenthesis in {text:?}"));
    }
    let head = text[..open].trim();
    if head.is_empty() || !head.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(format!("invalid symbol {head:?}"));
    }
    let inner = &text[open + 1..text.len() - 1];
    let args = if inner.trim().is_empty() {
        Vec::new()
    } else {
        inner
            .split(',')
            .map(|a| {
                let a = a.trim();
                if a.is_empty() {
                    Err(format!("empty argument in {text:?}"))
                } else {
                    Ok(ObjectId::new(a))
                }
            })
            .collect::<Result<_, _>>()?
    };
    Ok((head.to_owned(), args))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CallRepr {
    Text(String),
    Pred { pred: String, args: Vec<ObjectId> },
    Name { name: String, args: Vec<ObjectId> },
}

impl<'de> Deserialize<'de> for Atom {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match CallRepr::deserialize(d)? {
            CallRepr::Text(t) => Atom::parse(&t).map_err(de::Error::custom),
            CallRepr::Pred { pred, args } => Ok(Atom { pred, args }),
            CallRepr::Name { .. } => Err(de::Error::custom("atom requires a `pred` field")),
        }
    }
}

impl<'de> Deserialize<'de> for ActionInstance {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match CallRepr::deserialize(d)? {
            CallRepr::Text(t) => ActionInstance::parse(&t).map_err(de::Error::custom),
            CallRepr::Name { name, args } => Ok(ActionInstance { name, args }),
            CallRepr::Pred { .. } => Err(de::Error::custom("action requires a `name` field")),
        }
    }
}
