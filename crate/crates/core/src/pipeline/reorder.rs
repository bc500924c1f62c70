use std::collections::BTreeMap;

/// Releases completed items strictly in ticket order.
///
/// Tickets are handed out by [`reserve`](Self::reserve) in ingestion order;
/// [`complete`](Self::complete) may be called in any order and returns the
/// run of items that became deliverable.
#[derive(Debug)]
pub struct ReorderBuffer<T> {
    next_ticket: u64,
    next_release: u64,
    pending: BTreeMap<u64, T>,
}

impl<T> Default for ReorderBuffer<T> {
    fn default() -> Self {
        Self::starting_at(1)
    }
}

impl<T> ReorderBuffer<T> {
    pub fn starting_at(first: u64) -> Self {
        Self {
            next_ticket: first,
            next_release: first,
            pending: BTreeMap::new(),
        }
    }

    pub fn reserve(&mut self) -> u64 {
        let t = self.next_ticket;
        self.next_ticket += 1;
        t
    }

    /// # Panics
    /// If `ticket` was never reserved or has already completed.
    pub fn complete(&mut self, ticket: u64, item: T) -> Vec<T> {
        assert!(
            ticket >= self.next_release && ticket < self.next_ticket,
            "ticket {ticket} is not outstanding"
        );
        let previous = self.pending.insert(ticket, item);
        assert!(previous.is_none(), "ticket {ticket} completed twice");
        let mut ready = Vec::new();
        while let Some(item) = self.pending.remove(&self.next_release) {
            ready.push(item);
            self.next_release += 1;
        }
        ready
    }

    /// Tickets reserved but not yet released.
    pub fn in_flight(&self) -> u64 {
        self.next_ticket - self.next_release
    }
}
