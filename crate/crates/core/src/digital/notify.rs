use std::collections::VecDeque;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::gm::{GmComponent, GmContext, GmError};
use crate::kernel::Timestamp;

pub const NOTIFICATION_PREFIX: &str = "Notification:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub recipient: String,
    pub text: String,
    pub timestamp: Timestamp,
}

/// Notifications waiting for their recipient's next turn. Clones share the
/// same queue.
#[derive(Debug, Clone, Default)]
pub struct NotificationHub {
    queue: Arc<Mutex<VecDeque<Notification>>>,
}

impl NotificationHub {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, recipient: impl Into<String>, text: impl Into<String>, timestamp: Timestamp) {
        self.queue.lock().push_back(Notification {
            recipient: recipient.into(),
            text: text.into(),
            timestamp,
        });
    }

    /// Removes and returns the recipient's notifications, oldest first.
    pub fn take_for(&self, recipient: &str) -> Vec<Notification> {
        let mut queue = self.queue.lock();
        let (mine, rest): (VecDeque<_>, VecDeque<_>) =
            queue.drain(..).partition(|n| n.recipient == recipient);
        *queue = rest;
        mine.into_iter().collect()
    }

    pub fn pending(&self) -> Vec<Notification> {
        self.queue.lock().iter().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.queue.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.lock().is_empty()
    }
}

/// Turns the acting player's queued notifications into observations and
/// dequeues them. Returns how many were delivered.
pub fn deliver_notifications(hub: &NotificationHub, ctx: &mut GmContext<'_>) -> Result<usize, GmError> {
    let Some(player) = ctx.actor().map(str::to_string) else {
        return Ok(0);
    };
    let mut delivered = 0;
    for notification in hub.take_for(&player) {
        let text = format!("{NOTIFICATION_PREFIX} {}", notification.text);
        if ctx.emit_observation(&player, &text)?.is_some() {
            delivered += 1;
        }
    }
    Ok(delivered)
}

/// Delivers notifications at the start of each player's turn.
#[derive(Debug, Clone)]
pub struct NotificationComponent {
    name: String,
    hub: NotificationHub,
    delivered: usize,
}

impl NotificationComponent {
    pub fn new(hub: NotificationHub) -> Self {
        NotificationComponent {
            name: "notifications".to_string(),
            hub,
            delivered: 0,
        }
    }

    pub fn delivered(&self) -> usize {
        self.delivered
    }
}

impl GmComponent for NotificationComponent {
    fn name(&self) -> &str {
        &self.name
    }

    fn state(&self) -> String {
        let pending = self.hub.len();
        if pending == 0 {
            String::new()
        } else {
            format!("{pending} notification(s) pending")
        }
    }

    fn update(&mut self, ctx: &mut GmContext<'_>) -> Result<(), GmError> {
        self.delivered += deliver_notifications(&self.hub, ctx)?;
        Ok(())
    }
}
