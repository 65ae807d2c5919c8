use crate::scenario::EvId;

/// Vehicle with the earliest connection time; ties go to the lower id.
pub fn select_fcfs<I>(connected: I) -> Option<EvId>
where
    I: IntoIterator<Item = (EvId, f64)>,
{
    connected
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(ev, _)| ev)
}

/// Next vehicle after `cursor` in cyclic order, and the advanced cursor.
///
/// `cursor` is the position of the most recently selected vehicle, or
/// `None` before the first selection.
pub fn select_shrd(cycle: &[EvId], cursor: Option<usize>) -> (Option<EvId>, Option<usize>) {
    if cycle.is_empty() {
        return (None, cursor);
    }
    let next = cursor.map_or(0, |c| (c + 1) % cycle.len());
    (Some(cycle[next]), Some(next))
}

/// Round-robin order of a column's vehicles that still need energy,
/// kept in connection order.
#[derive(Debug, Clone, Default)]
pub struct ShrdCycle {
    order: Vec<EvId>,
    cursor: Option<usize>,
}

impl ShrdCycle {
    pub fn members(&self) -> &[EvId] {
        &self.order
    }

    pub fn push(&mut self, ev: EvId) {
        self.order.push(ev);
    }

    pub fn select(&mut self) -> Option<EvId> {
        let (ev, cursor) = select_shrd(&self.order, self.cursor);
        self.cursor = cursor;
        ev
    }

    /// Removes `ev` so that the vehicle that followed it is selected next.
    pub fn remove(&mut self, ev: EvId) {
        let Some(r) = self.order.iter().position(|&e| e == ev) else {
            return;
        };
        self.order.remove(r);
        self.cursor = match self.cursor {
            _ if self.order.is_empty() => None,
            Some(c) if r < c => Some(c - 1),
            Some(c) if r == c => {
                if c == 0 {
                    // The follower now sits at index 0; point at the tail so
                    // the next step wraps onto it.
                    Some(self.order.len() - 1)
                } else {
                    Some(c - 1)
                }
            }
            other => other,
        };
    }
}
