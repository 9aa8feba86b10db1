use super::{BlockOrigin, MemBlock, MemoryState, RuntimeValue};
use crate::ir::{Function, InstKind, Operand, TransformationPair, Type};

/// Shape of the caller-visible memory: one fixed-size buffer per pointer
/// parameter, with a cell type inferred from how the parameter is accessed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryLayout {
    /// `(parameter index, cell type)` for every pointer parameter, in order.
    pub buffers: Vec<(usize, Type)>,
    pub cells_per_buffer: u32,
}

impl MemoryLayout {
    pub fn for_function(f: &Function, cells_per_buffer: u32) -> MemoryLayout {
        Self::infer(&[f], cells_per_buffer)
    }

    /// Layout shared by both sides of a pair; the source's accesses take
    /// precedence when the two disagree.
    pub fn for_pair(pair: &TransformationPair, cells_per_buffer: u32) -> MemoryLayout {
        Self::infer(&[&pair.src, &pair.tgt], cells_per_buffer)
    }

    fn infer(fs: &[&Function], cells_per_buffer: u32) -> MemoryLayout {
        let params = &fs[0].params;
        let buffers = params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.ty == Type::Ptr)
            .map(|(i, p)| {
                let elem = fs
                    .iter()
                    .flat_map(|f| f.instructions())
                    .find_map(|inst| match &inst.kind {
                        InstKind::Load {
                            ty,
                            ptr: Operand::Reg(r),
                        }
                        | InstKind::Store {
                            ty,
                            ptr: Operand::Reg(r),
                            ..
                        } if *r == p.name => Some(*ty),
                        _ => None,
                    })
                    .unwrap_or(Type::I8);
                (i, elem)
            })
            .collect();
        MemoryLayout {
            buffers,
            cells_per_buffer,
        }
    }

    pub fn total_cells(&self) -> usize {
        self.buffers.len() * self.cells_per_buffer as usize
    }

    /// Type of the `k`-th cell in flattened order.
    pub fn cell_type(&self, k: usize) -> Type {
        self.buffers[k / self.cells_per_buffer as usize].1
    }

    /// Memory block id for a parameter, if it is a pointer.
    pub fn block_of_param(&self, param: usize) -> Option<u32> {
        self.buffers
            .iter()
            .position(|(i, _)| *i == param)
            .map(|b| b as u32)
    }

    pub fn pointer_to(&self, param: usize) -> RuntimeValue {
        RuntimeValue::Ptr {
            block: self.block_of_param(param).expect("parameter is a pointer"),
            offset: 0,
        }
    }

    /// Builds the initial memory from cell values in flattened order.
    pub fn build(&self, cells: &[RuntimeValue]) -> MemoryState {
        assert_eq!(cells.len(), self.total_cells());
        let n = self.cells_per_buffer as usize;
        MemoryState {
            blocks: self
                .buffers
                .iter()
                .enumerate()
                .map(|(b, (param, elem))| MemBlock {
                    elem: *elem,
                    origin: BlockOrigin::Param(*param as u32),
                    cells: cells[b * n..(b + 1) * n].to_vec(),
                })
                .collect(),
        }
    }

    /// Flattened cell values of the parameter buffers in `mem`.
    pub fn cells_of(&self, mem: &MemoryState) -> Vec<RuntimeValue> {
        mem.param_blocks()
            .flat_map(|b| b.cells.iter().copied())
            .collect()
    }
}
