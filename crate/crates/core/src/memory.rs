//! Ego-side memory bank: one reconstructed-feature slot per collaborating
//! agent plus a single fused-history slot. The bank is recurrent, not
//! windowed — its size stays O(N+1) grids no matter how long the run is.
//!
//! A miss is a normal value, not an error; the pipeline branches on it
//! (first frames run without history).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{FeatureGrid, Pose};
use crate::scalar::Real;
use crate::wire::{self, SparseTokenSet};

/// One stored feature with the pose and frame it was produced at.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorySlot<T> {
    pub grid: FeatureGrid<T>,
    pub pose: Pose<T>,
    pub frame: u32,
}

#[derive(Debug, Clone, Default)]
pub struct MemoryBank<T> {
    agent_slots: BTreeMap<u16, MemorySlot<T>>,
    fused_slot: Option<MemorySlot<T>>,
}

impl<T: Real> MemoryBank<T> {
    pub fn new() -> Self {
        MemoryBank {
            agent_slots: BTreeMap::new(),
            fused_slot: None,
        }
    }

    /// Stored tuple for an agent, or a miss.
    pub fn get(&self, agent_id: u16) -> Option<&MemorySlot<T>> {
        self.agent_slots.get(&agent_id)
    }

    /// Overwrite an agent's slot. The frame index must strictly advance.
    pub fn put(&mut self, agent_id: u16, grid: FeatureGrid<T>, pose: Pose<T>, frame: u32) -> Result<()> {
        if let Some(existing) = self.agent_slots.get(&agent_id) {
            if frame <= existing.frame {
                return Err(Error::FrameOrder {
                    stored: existing.frame,
                    new: frame,
                });
            }
        }
        self.agent_slots.insert(agent_id, MemorySlot { grid, pose, frame });
        Ok(())
    }

    pub fn get_fused(&self) -> Option<&MemorySlot<T>> {
        self.fused_slot.as_ref()
    }

    pub fn put_fused(&mut self, grid: FeatureGrid<T>, pose: Pose<T>, frame: u32) -> Result<()> {
        if let Some(existing) = &self.fused_slot {
            if frame <= existing.frame {
                return Err(Error::FrameOrder {
                    stored: existing.frame,
                    new: frame,
                });
            }
        }
        self.fused_slot = Some(MemorySlot { grid, pose, frame });
        Ok(())
    }

    /// Number of stored grids (agent slots plus the fused slot if present).
    pub fn len(&self) -> usize {
        self.agent_slots.len() + usize::from(self.fused_slot.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn agent_ids(&self) -> impl Iterator<Item = u16> + '_ {
        self.agent_slots.keys().copied()
    }

    /// Write a versioned snapshot. Each slot's grid travels as a dense
    /// message in the token wire encoding, which already carries the pose
    /// and frame; the container header records the shared grid geometry.
    /// Values are half precision on disk, like everything at the wire
    /// boundary.
    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let some_grid = self
            .agent_slots
            .values()
            .map(|s| &s.grid)
            .chain(self.fused_slot.iter().map(|s| &s.grid))
            .next();
        let Some(g) = some_grid else {
            return Err(Error::config("cannot snapshot an empty memory bank"));
        };

        let mut buf = Vec::new();
        buf.extend_from_slice(b"CSNP");
        buf.push(1u8);
        buf.extend_from_slice(&g.resolution().as_f64().to_le_bytes());
        buf.extend_from_slice(&g.origin().0.as_f64().to_le_bytes());
        buf.extend_from_slice(&g.origin().1.as_f64().to_le_bytes());
        buf.extend_from_slice(&(g.height() as u16).to_le_bytes());
        buf.extend_from_slice(&(g.width() as u16).to_le_bytes());
        buf.extend_from_slice(&(self.agent_slots.len() as u16).to_le_bytes());
        buf.push(u8::from(self.fused_slot.is_some()));

        let push_slot = |buf: &mut Vec<u8>, id: u16, slot: &MemorySlot<T>| {
            let msg = SparseTokenSet::dense_from_grid(&slot.grid, id, slot.frame, &slot.pose);
            let bytes = wire::encode_tokens(&msg);
            buf.extend_from_slice(&id.to_le_bytes());
            buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            buf.extend_from_slice(&bytes);
        };
        for (id, slot) in &self.agent_slots {
            push_slot(&mut buf, *id, slot);
        }
        if let Some(slot) = &self.fused_slot {
            push_slot(&mut buf, u16::MAX, slot);
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());

        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    /// Load a snapshot written by [`Self::save_snapshot`].
    pub fn load_snapshot(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 4 + 1 + 24 + 2 + 2 + 2 + 1 + 4 {
            return Err(Error::config("snapshot too short"));
        }
        let body = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body..].try_into().unwrap());
        if stored != crc32fast::hash(&bytes[..body]) {
            return Err(Error::config("snapshot checksum mismatch"));
        }
        if &bytes[..4] != b"CSNP" {
            return Err(Error::config("snapshot bad magic"));
        }
        if bytes[4] != 1 {
            return Err(Error::config(format!("snapshot version {}", bytes[4])));
        }
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let resolution = f64_at(5);
        let ox = f64_at(13);
        let oy = f64_at(21);
        let height = u16::from_le_bytes(bytes[29..31].try_into().unwrap()) as usize;
        let width = u16::from_le_bytes(bytes[31..33].try_into().unwrap()) as usize;
        let agent_count = u16::from_le_bytes(bytes[33..35].try_into().unwrap()) as usize;
        let has_fused = bytes[35] != 0;

        let mut bank = MemoryBank::new();
        let mut pos = 36usize;
        let total = agent_count + usize::from(has_fused);
        for i in 0..total {
            if pos + 6 > body {
                return Err(Error::config("snapshot truncated slot header"));
            }
            let id = u16::from_le_bytes(bytes[pos..pos + 2].try_into().unwrap());
            let len = u32::from_le_bytes(bytes[pos + 2..pos + 6].try_into().unwrap()) as usize;
            pos += 6;
            if pos + len > body {
                return Err(Error::config("snapshot truncated slot payload"));
            }
            let msg = wire::decode_tokens(&bytes[pos..pos + len]).map_err(Error::Wire)?;
            pos += len;
            msg.validate_bounds(height, width).map_err(Error::Wire)?;

            let mut grid = FeatureGrid::with_origin(
                height,
                width,
                msg.channels as usize,
                T::c(resolution),
                (T::c(ox), T::c(oy)),
            );
            for e in &msg.entries {
                let cell = grid.cell_mut(e.h as usize, e.w as usize);
                for (slot, v) in cell.iter_mut().zip(&e.values) {
                    *slot = T::c(v.to_f64());
                }
            }
            let pose: Pose<T> = msg.pose();
            let slot = MemorySlot { grid, pose, frame: msg.frame };
            let is_fused = has_fused && i == total - 1;
            if is_fused {
                bank.fused_slot = Some(slot);
            } else {
                bank.agent_slots.insert(id, slot);
            }
        }
        Ok(bank)
    }
}
