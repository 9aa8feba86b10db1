//! Execution under undef/poison/UB semantics and the refinement relations
//! between source and target behaviors.

mod enumerate;
mod exec;
mod layout;
mod refine;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ir::{mask, Type};

pub use enumerate::{outcome_set, OutcomeSet, UndefBudget, MAX_UNDEF_ENUM_BITS};
pub use exec::{
    execute, execute_function, FixedChoices, LowerError, Program, UndefChoice, ZeroChoice,
};
pub use layout::MemoryLayout;
pub use refine::{
    memory_refines, outcome_refines, value_refines, RefinementResult, RefinementStatus, Violation,
};

/// A value as seen at run time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RuntimeValue {
    Poison,
    Undef(Type),
    Int { width: u32, value: u64 },
    Ptr { block: u32, offset: u32 },
    Null,
}

impl RuntimeValue {
    pub fn int(width: u32, value: u64) -> RuntimeValue {
        RuntimeValue::Int {
            width,
            value: value & mask(width),
        }
    }

    pub fn bool(b: bool) -> RuntimeValue {
        RuntimeValue::int(1, b as u64)
    }

    pub fn as_int(&self) -> Option<u64> {
        match self {
            RuntimeValue::Int { value, .. } => Some(*value),
            _ => None,
        }
    }
}

impl fmt::Display for RuntimeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuntimeValue::Poison => f.write_str("poison"),
            RuntimeValue::Undef(t) => write!(f, "undef {t}"),
            RuntimeValue::Int { width, value } => write!(f, "i{width} {value}"),
            RuntimeValue::Ptr { block, offset } => write!(f, "ptr {block}:{offset}"),
            RuntimeValue::Null => f.write_str("null"),
        }
    }
}

impl FromStr for RuntimeValue {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "poison" => return Ok(RuntimeValue::Poison),
            "null" => return Ok(RuntimeValue::Null),
            _ => {}
        }
        let (head, rest) = s
            .split_once(' ')
            .ok_or_else(|| format!("malformed value `{s}`"))?;
        match head {
            "undef" => Ok(RuntimeValue::Undef(rest.parse()?)),
            "ptr" => {
                let (b, o) = rest
                    .split_once(':')
                    .ok_or_else(|| format!("malformed pointer `{s}`"))?;
                Ok(RuntimeValue::Ptr {
                    block: b.parse().map_err(|_| format!("malformed pointer `{s}`"))?,
                    offset: o.parse().map_err(|_| format!("malformed pointer `{s}`"))?,
                })
            }
            ty => {
                let Type::Int(width) = ty.parse::<Type>()? else {
                    return Err(format!("malformed value `{s}`"));
                };
                let value: u64 = rest
                    .parse()
                    .map_err(|_| format!("malformed integer `{s}`"))?;
                if value > mask(width) {
                    return Err(format!("{value} does not fit in i{width}"));
                }
                Ok(RuntimeValue::Int { width, value })
            }
        }
    }
}

impl Serialize for RuntimeValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RuntimeValue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockOrigin {
    /// Pointee buffer of the pointer parameter at this position.
    Param(u32),
    Alloca,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MemBlock {
    #[serde(with = "type_str")]
    pub elem: Type,
    pub origin: BlockOrigin,
    pub cells: Vec<RuntimeValue>,
}

/// Typed cell memory. Parameter buffers come first, in parameter order, then
/// one block per executed `alloca`. Cell counts never change.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MemoryState {
    pub blocks: Vec<MemBlock>,
}

impl MemoryState {
    pub fn empty() -> MemoryState {
        MemoryState::default()
    }

    /// Blocks visible to the caller (parameter buffers).
    pub fn param_blocks(&self) -> impl Iterator<Item = &MemBlock> {
        self.blocks
            .iter()
            .filter(|b| matches!(b.origin, BlockOrigin::Param(_)))
    }
}

mod type_str {
    use super::Type;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &Type, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(t)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Type, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UbKind {
    DivByZero,
    RemByZero,
    /// `sdiv`/`srem` of the minimum value by -1.
    DivOverflow,
    NullDeref,
    OutOfBounds,
    BranchOnPoison,
    /// Load or store whose type differs from the cell type.
    IllTypedAccess,
}

/// Instruction position: block index and instruction index within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstLoc {
    pub block: u32,
    pub inst: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExecOutcome {
    Returned {
        value: Option<RuntimeValue>,
        memory: MemoryState,
    },
    TriggeredUb {
        ub: UbKind,
        at: InstLoc,
    },
    OutOfFuel,
}

impl ExecOutcome {
    pub fn is_ub(&self) -> bool {
        matches!(self, ExecOutcome::TriggeredUb { .. })
    }
}

impl fmt::Display for ExecOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecOutcome::Returned { value, memory } => {
                match value {
                    Some(v) => write!(f, "returned {v}")?,
                    None => f.write_str("returned void")?,
                }
                for (i, b) in memory.blocks.iter().enumerate() {
                    if let BlockOrigin::Param(p) = b.origin {
                        let cells: Vec<String> = b.cells.iter().map(|c| c.to_string()).collect();
                        write!(f, "; mem[{i}] (param {p}) = [{}]", cells.join(", "))?;
                    }
                }
                Ok(())
            }
            ExecOutcome::TriggeredUb { ub, at } => write!(
                f,
                "undefined behavior {ub:?} at block {} inst {}",
                at.block, at.inst
            ),
            ExecOutcome::OutOfFuel => f.write_str("out of fuel"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_text_round_trips() {
        for v in [
            RuntimeValue::Poison,
            RuntimeValue::Undef(Type::I8),
            RuntimeValue::Undef(Type::Ptr),
            RuntimeValue::int(8, 255),
            RuntimeValue::int(64, u64::MAX),
            RuntimeValue::Ptr {
                block: 2,
                offset: 1,
            },
            RuntimeValue::Null,
        ] {
            assert_eq!(v.to_string().parse::<RuntimeValue>().unwrap(), v);
        }
        assert!("i8 256".parse::<RuntimeValue>().is_err());
    }

    #[test]
    fn outcome_json_shape() {
        let o = ExecOutcome::TriggeredUb {
            ub: UbKind::DivByZero,
            at: InstLoc { block: 0, inst: 1 },
        };
        let json = serde_json::to_string(&o).unwrap();
        assert_eq!(
            json,
            r#"{"kind":"triggered_ub","ub":"div_by_zero","at":{"block":0,"inst":1}}"#
        );
        assert_eq!(serde_json::from_str::<ExecOutcome>(&json).unwrap(), o);
    }
}
