//! Brute-force reference sweep over every mapped word.
//!
//! Shares nothing with logs, the cache or compression: it is ground truth for
//! checking that the engine never releases a referenced object and that it
//! retains exactly the referenced ones.

use std::collections::{BTreeSet, HashSet};

use crate::simspace::{ObjectKey, ObjectState, SimSpace, SimValue};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepResult {
    pub id: u64,
    /// Sorted addresses currently holding a pointer whose ID is `id`.
    pub refs: Vec<u64>,
}

impl SweepResult {
    pub fn is_unreferenced(&self) -> bool {
        self.refs.is_empty()
    }
}

pub fn sweep(space: &SimSpace, id: u64) -> SweepResult {
    let mut refs = Vec::new();
    space.for_each_word(|addr, value| {
        if value.pointee() == Some(id) {
            refs.push(addr);
        }
    });
    refs.sort_unstable();
    SweepResult { id, refs }
}

/// True when releasing `id` now would leave no pointer to it behind.
pub fn check_release(space: &SimSpace, id: u64) -> bool {
    sweep(space, id).is_unreferenced()
}

/// User-freed objects that some mapped word still points to.
pub fn still_referenced(space: &SimSpace) -> BTreeSet<ObjectKey> {
    let mut ids = HashSet::new();
    space.for_each_word(|_, value| {
        if let SimValue::Pointer(_) = value {
            ids.extend(value.pointee());
        }
    });
    space
        .records()
        .filter(|(_, rec)| rec.state == ObjectState::UserFreed && ids.contains(&rec.id))
        .map(|(key, _)| key)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simspace::{global_addr, stack_addr, Placement};

    #[test]
    fn sweep_finds_every_reference() {
        let mut s = SimSpace::new(32).unwrap();
        let (_, obj) = s.allocate(32, Placement::Low).unwrap();
        let (holder_key, holder) = s.allocate(64, Placement::Low).unwrap();
        s.write_word(global_addr(2), SimValue::Pointer(obj)).unwrap();
        assert_eq!(sweep(&s, obj.addr()).refs, vec![global_addr(2)]);

        s.write_word(holder.addr() + 8, SimValue::Pointer(obj.offset(8))).unwrap();
        s.write_word(stack_addr(0), SimValue::Data(obj.raw())).unwrap();
        assert_eq!(sweep(&s, obj.addr()).refs, vec![holder.addr() + 8, global_addr(2)]);

        s.write_word(global_addr(2), SimValue::Data(0)).unwrap();
        s.mark_freed(holder_key).unwrap();
        s.release(holder_key).unwrap();
        assert!(sweep(&s, obj.addr()).is_unreferenced());
        assert!(check_release(&s, obj.addr()));
        assert_eq!(check_release(&s, obj.addr()), check_release(&s, obj.addr()));
    }

    #[test]
    fn still_referenced_only_lists_user_freed() {
        let mut s = SimSpace::new(32).unwrap();
        let (a, pa) = s.allocate(16, Placement::Low).unwrap();
        let (b, pb) = s.allocate(16, Placement::High).unwrap();
        let (c, _) = s.allocate(16, Placement::Low).unwrap();
        s.write_word(stack_addr(0), SimValue::Pointer(pa)).unwrap();
        s.write_word(stack_addr(1), SimValue::Pointer(pb)).unwrap();
        s.mark_freed(a).unwrap();
        s.mark_freed(c).unwrap();
        assert_eq!(still_referenced(&s), BTreeSet::from([a]));
        assert_eq!(s.record(b).state, ObjectState::Live);
    }
}
