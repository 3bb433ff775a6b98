//! Binary occupancy codec for global states.
//!
//! Each entity slot owns a `grid_w * grid_h` block of bits; the bit at
//! the entity's cell is set while it is alive. Dead entities encode as
//! an all-zero block, so the encoding carries no position for them and
//! decoding restores a dead entity at the origin.

use super::{Entity, GridWorldState, Role};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SlotDesc {
    pub role: Role,
    pub level: u8,
}

/// Layout descriptor mapping (slot, cell) pairs to bit positions.
#[derive(Clone, Debug, PartialEq)]
pub struct StateCodec {
    pub grid_w: i32,
    pub grid_h: i32,
    pub horizon: usize,
    pub slots: Vec<SlotDesc>,
}

impl StateCodec {
    pub fn for_state(state: &GridWorldState) -> Self {
        StateCodec {
            grid_w: state.grid_w,
            grid_h: state.grid_h,
            horizon: state.horizon,
            slots: state
                .entities
                .iter()
                .map(|e| SlotDesc { role: e.role, level: e.level })
                .collect(),
        }
    }

    /// Total bit length: one block of `grid_w * grid_h` per slot.
    pub fn bits(&self) -> usize {
        self.slots.len() * (self.grid_w * self.grid_h) as usize
    }

    fn cells(&self) -> usize {
        (self.grid_w * self.grid_h) as usize
    }

    pub fn encode(&self, state: &GridWorldState) -> Result<Vec<u8>> {
        if state.entities.len() != self.slots.len() {
            return Err(Error::invalid("state does not match codec layout"));
        }
        let cells = self.cells();
        let mut out = vec![0u8; self.bits()];
        for (i, e) in state.entities.iter().enumerate() {
            if self.slots[i].role != e.role {
                return Err(Error::invalid("entity role does not match codec slot"));
            }
            if e.alive {
                if !state.in_bounds(e.pos) {
                    return Err(Error::invalid("entity out of bounds"));
                }
                let cell = (e.pos.1 * self.grid_w + e.pos.0) as usize;
                out[i * cells + cell] = 1;
            }
        }
        Ok(out)
    }

    pub fn decode(&self, bits: &[u8]) -> Result<GridWorldState> {
        if bits.len() != self.bits() {
            return Err(Error::data(format!(
                "encoded state has {} entries, codec expects {}",
                bits.len(),
                self.bits()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::data("non-binary entry in encoded state"));
        }
        let cells = self.cells();
        let mut entities = Vec::with_capacity(self.slots.len());
        for (i, slot) in self.slots.iter().enumerate() {
            let block = &bits[i * cells..(i + 1) * cells];
            let ones: Vec<usize> =
                block.iter().enumerate().filter(|(_, &b)| b == 1).map(|(j, _)| j).collect();
            let (pos, alive) = match ones.len() {
                0 => ((0, 0), false),
                1 => {
                    let c = ones[0] as i32;
                    ((c % self.grid_w, c / self.grid_w), true)
                }
                _ => return Err(Error::data("multiple positions set for one entity slot")),
            };
            entities.push(Entity { role: slot.role, pos, level: slot.level, alive });
        }
        Ok(GridWorldState {
            grid_w: self.grid_w,
            grid_h: self.grid_h,
            entities,
            step_index: 0,
            horizon: self.horizon,
        })
    }

    /// Encoded state as f64 zeros and ones, the network input form.
    pub fn encode_f64(&self, state: &GridWorldState) -> Result<Vec<f64>> {
        Ok(self.encode(state)?.into_iter().map(f64::from).collect())
    }
}
