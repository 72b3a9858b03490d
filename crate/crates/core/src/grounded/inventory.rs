use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Amount;
use crate::gm::{GmComponent, GmContext, GmError, INVALID_ACTION};
use crate::kernel::{AgentAction, EventStatement};
use crate::model::{Model, ModelError, DEFAULT_MAX_TOKENS};

pub const DEFAULT_CURRENCY: &str = "coin";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InventoryError {
    #[error("unknown player {0:?}")]
    UnknownPlayer(String),
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("quantity must be positive, got {0}")]
    NonPositive(Amount),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransferOutcome {
    Applied,
    Vetoed { reason: String },
}

/// One exchange: `buyer` receives `quantity` of `item` from `seller` and
/// pays `price` in the currency.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trade {
    pub buyer: String,
    pub seller: String,
    pub item: String,
    pub quantity: Amount,
    pub price: Amount,
}

impl std::fmt::Display for Trade {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} bought {} {} from {} for {}",
            self.buyer, self.quantity, self.item, self.seller, self.price
        )
    }
}

/// Per-player holdings. Quantities never go negative; totals per item change
/// only through [`InventoryState::endow`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InventoryState {
    currency: String,
    players: Vec<String>,
    items: Vec<String>,
    holdings: BTreeMap<String, BTreeMap<String, Amount>>,
}

impl InventoryState {
    /// The currency is added to `items` if missing.
    pub fn new(players: &[String], items: &[String], currency: &str) -> Self {
        let mut all_items = vec![currency.to_string()];
        for item in items {
            if !all_items.contains(item) {
                all_items.push(item.clone());
            }
        }
        let holdings = players
            .iter()
            .map(|p| {
                let row = all_items.iter().map(|i| (i.clone(), Amount::ZERO)).collect();
                (p.clone(), row)
            })
            .collect();
        InventoryState {
            currency: currency.to_string(),
            players: players.to_vec(),
            items: all_items,
            holdings,
        }
    }

    pub fn currency(&self) -> &str {
        &self.currency
    }

    pub fn players(&self) -> &[String] {
        &self.players
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    fn slot(&mut self, player: &str, item: &str) -> Result<&mut Amount, InventoryError> {
        let row = self
            .holdings
            .get_mut(player)
            .ok_or_else(|| InventoryError::UnknownPlayer(player.to_string()))?;
        row.get_mut(item)
            .ok_or_else(|| InventoryError::UnknownItem(item.to_string()))
    }

    pub fn balance(&self, player: &str, item: &str) -> Result<Amount, InventoryError> {
        let row = self
            .holdings
            .get(player)
            .ok_or_else(|| InventoryError::UnknownPlayer(player.to_string()))?;
        row.get(item)
            .copied()
            .ok_or_else(|| InventoryError::UnknownItem(item.to_string()))
    }

    /// Explicit initial endowment; the only way totals change.
    pub fn endow(&mut self, player: &str, item: &str, amount: Amount) -> Result<(), InventoryError> {
        if amount.hundredths() < 0 {
            return Err(InventoryError::NonPositive(amount));
        }
        let slot = self.slot(player, item)?;
        *slot = slot
            .checked_add(amount)
            .ok_or_else(|| InventoryError::Invalid("endowment overflows".into()))?;
        Ok(())
    }

    pub fn total(&self, item: &str) -> Amount {
        Amount::from_hundredths(
            self.holdings
                .values()
                .filter_map(|row| row.get(item))
                .map(|a| a.hundredths())
                .sum(),
        )
    }

    fn check(&self, from: &str, to: &str, item: &str, qty: Amount) -> Result<Option<String>, InventoryError> {
        if !qty.is_positive() {
            return Err(InventoryError::NonPositive(qty));
        }
        self.balance(to, item)?;
        let available = self.balance(from, item)?;
        if from == to {
            return Err(InventoryError::Invalid(format!("{from} cannot trade with themselves")));
        }
        Ok((available < qty).then(|| format!("insufficient {item}")))
    }

    /// Moves `qty` of `item` from `from` to `to` if `from` holds enough;
    /// otherwise changes nothing and reports a veto.
    pub fn apply_transfer(
        &mut self,
        from: &str,
        to: &str,
        item: &str,
        qty: Amount,
    ) -> Result<TransferOutcome, InventoryError> {
        if let Some(reason) = self.check(from, to, item, qty)? {
            return Ok(TransferOutcome::Vetoed { reason });
        }
        let from_slot = self.slot(from, item)?;
        *from_slot = Amount::from_hundredths(from_slot.hundredths() - qty.hundredths());
        let to_slot = self.slot(to, item)?;
        *to_slot = Amount::from_hundredths(to_slot.hundredths() + qty.hundredths());
        Ok(TransferOutcome::Applied)
    }

    /// The legs of `trade`: goods from seller to buyer, then payment.
    fn legs(&self, trade: &Trade) -> Result<Vec<(String, String, String, Amount)>, InventoryError> {
        if trade.price.hundredths() < 0 {
            return Err(InventoryError::NonPositive(trade.price));
        }
        if trade.item == self.currency && trade.price.is_positive() {
            return Err(InventoryError::Invalid(format!(
                "cannot buy {} with {}",
                self.currency, self.currency
            )));
        }
        let mut legs = vec![(
            trade.seller.clone(),
            trade.buyer.clone(),
            trade.item.clone(),
            trade.quantity,
        )];
        if trade.price.is_positive() {
            legs.push((
                trade.buyer.clone(),
                trade.seller.clone(),
                self.currency.clone(),
                trade.price,
            ));
        }
        Ok(legs)
    }

    /// Why `trade` could not be applied right now, if it could not.
    pub fn check_trade(&self, trade: &Trade) -> Result<Option<String>, InventoryError> {
        for (from, to, item, qty) in self.legs(trade)? {
            if let Some(reason) = self.check(&from, &to, &item, qty)? {
                return Ok(Some(reason));
            }
        }
        Ok(None)
    }

    /// Applies both legs of `trade` or neither.
    pub fn apply_trade(&mut self, trade: &Trade) -> Result<TransferOutcome, InventoryError> {
        if let Some(reason) = self.check_trade(trade)? {
            return Ok(TransferOutcome::Vetoed { reason });
        }
        // the legs touch different items, so checking each alone suffices
        for (from, to, item, qty) in self.legs(trade)? {
            self.apply_transfer(&from, &to, &item, qty)?;
        }
        Ok(TransferOutcome::Applied)
    }

    /// "Alice has 5 coin and 2 beans".
    pub fn describe(&self, player: &str) -> String {
        let Some(row) = self.holdings.get(player) else {
            return String::new();
        };
        let parts: Vec<String> = self
            .items
            .iter()
            .map(|item| format!("{} {item}", row.get(item).copied().unwrap_or_default()))
            .collect();
        format!("{player} has {}", join_and(&parts))
    }

    /// Player → item → fixed-point string.
    pub fn snapshot(&self) -> serde_json::Value {
        let map: BTreeMap<&String, BTreeMap<&String, String>> = self
            .holdings
            .iter()
            .map(|(p, row)| (p, row.iter().map(|(i, a)| (i, a.to_fixed())).collect()))
            .collect();
        serde_json::to_value(map).unwrap_or(serde_json::Value::Null)
    }
}

fn join_and(parts: &[String]) -> String {
    match parts {
        [] => String::new(),
        [one] => one.clone(),
        [rest @ .., last] => format!("{} and {last}", rest.join(", ")),
    }
}

pub const TRADE_EXTRACTION_PROMPT: &str = "List every exchange of items between players in the text below, one per line, in the form:\nTRADE <buyer> <seller> <item> <quantity> <price>\nwhere the price is paid by the buyer in {currency}. If there is no exchange, answer NONE.";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TradeParseError {
    #[error("empty extraction")]
    Empty,
    #[error("both NONE and trades listed")]
    Mixed,
    #[error("line {line}: {message}")]
    BadLine { line: usize, message: String },
}

fn take_name<'a>(rest: &'a str, names: &[String]) -> Option<(&'a str, &'a str)> {
    names
        .iter()
        .filter(|n| {
            rest.starts_with(n.as_str())
                && rest[n.len()..].starts_with(char::is_whitespace)
        })
        .max_by_key(|n| n.len())
        .map(|n| (&rest[..n.len()], rest[n.len()..].trim_start()))
}

/// Parses the strict `TRADE buyer seller item qty price | NONE` grammar.
/// Names and items may contain spaces; the longest known one wins.
pub fn parse_trade_lines(
    raw: &str,
    players: &[String],
    items: &[String],
) -> Result<Vec<Trade>, TradeParseError> {
    let lines: Vec<&str> = raw.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if lines.is_empty() {
        return Err(TradeParseError::Empty);
    }
    let none = lines.iter().filter(|l| l.eq_ignore_ascii_case("none")).count();
    if none > 0 {
        return if none == lines.len() {
            Ok(Vec::new())
        } else {
            Err(TradeParseError::Mixed)
        };
    }
    let mut trades = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let bad = |message: &str| TradeParseError::BadLine {
            line: i + 1,
            message: message.to_string(),
        };
        let rest = line
            .strip_prefix("TRADE ")
            .ok_or_else(|| bad("expected TRADE or NONE"))?
            .trim_start();
        let (buyer, rest) = take_name(rest, players).ok_or_else(|| bad("unknown buyer"))?;
        let (seller, rest) = take_name(rest, players).ok_or_else(|| bad("unknown seller"))?;
        let (item, rest) = take_name(rest, items).ok_or_else(|| bad("unknown item"))?;
        let numbers: Vec<&str> = rest.split_whitespace().collect();
        let [qty, price] = numbers[..] else {
            return Err(bad("expected quantity and price"));
        };
        let quantity: Amount = qty.parse().map_err(|_| bad("bad quantity"))?;
        let price: Amount = price.parse().map_err(|_| bad("bad price"))?;
        if !quantity.is_positive() || price.hundredths() < 0 {
            return Err(bad("quantity must be positive and price non-negative"));
        }
        if buyer == seller {
            return Err(bad("buyer and seller are the same"));
        }
        trades.push(Trade {
            buyer: buyer.to_string(),
            seller: seller.to_string(),
            item: item.to_string(),
            quantity,
            price,
        });
    }
    Ok(trades)
}

/// One model call extracting trades from `text`. `Ok(None)` means the answer
/// was unusable; a warning is logged and nothing should change.
pub fn extract_trades(
    model: &Model,
    text: &str,
    inventory: &InventoryState,
) -> Result<Option<Vec<Trade>>, ModelError> {
    if text.trim().is_empty() {
        return Ok(Some(Vec::new()));
    }
    let prompt = format!(
        "{}\nPlayers: {}\nItems: {}\nText: {text}\nAnswer:",
        TRADE_EXTRACTION_PROMPT.replace("{currency}", inventory.currency()),
        inventory.players().join(", "),
        inventory.items().join(", "),
    );
    let raw = model.sample_text(&prompt, DEFAULT_MAX_TOKENS)?;
    match parse_trade_lines(&raw, inventory.players(), inventory.items()) {
        Ok(trades) => Ok(Some(trades)),
        Err(err) => {
            model
                .log()
                .note(format!("warning: ambiguous trade extraction ignored ({err}): {raw:?}"));
            Ok(None)
        }
    }
}

/// Grounds money and possessions: vetoes attempts the actor cannot afford
/// and applies trades narrated by events.
pub struct InventoryComponent {
    name: String,
    state: InventoryState,
    vetoed: bool,
}

impl InventoryComponent {
    pub fn new(state: InventoryState) -> Self {
        InventoryComponent {
            name: "inventory".to_string(),
            state,
            vetoed: false,
        }
    }

    pub fn inventory(&self) -> &InventoryState {
        &self.state
    }

    fn model(&self, ctx: &GmContext<'_>) -> Model {
        ctx.model().for_caller(format!("{}/{}", ctx.gm_name(), self.name))
    }
}

impl GmComponent for InventoryComponent {
    fn name(&self) -> &str {
        &self.name
    }

    fn state(&self) -> String {
        self.state
            .players()
            .iter()
            .map(|p| self.state.describe(p))
            .collect::<Vec<_>>()
            .join("; ")
    }

    /// Players see only their own holdings.
    fn partial_state(&self, player: &str) -> String {
        self.state.describe(player)
    }

    fn update_before_event(
        &mut self,
        cause: &AgentAction,
        ctx: &mut GmContext<'_>,
    ) -> Result<(), GmError> {
        self.vetoed = false;
        let Some(trades) = extract_trades(&self.model(ctx), &cause.text, &self.state)? else {
            return Ok(());
        };
        for trade in trades {
            match self.state.check_trade(&trade) {
                Ok(None) => {}
                Ok(Some(reason)) => {
                    self.vetoed = true;
                    ctx.veto(&self.name, reason);
                }
                Err(err) => ctx.log().note(format!("warning: trade ignored: {err}")),
            }
        }
        Ok(())
    }

    fn update_after_event(
        &mut self,
        event: &EventStatement,
        ctx: &mut GmContext<'_>,
    ) -> Result<(), GmError> {
        if std::mem::take(&mut self.vetoed) {
            return Ok(());
        }
        let Some(trades) = extract_trades(&self.model(ctx), &event.text, &self.state)? else {
            return Ok(());
        };
        for trade in trades {
            match self.state.apply_trade(&trade) {
                Ok(TransferOutcome::Applied) => {
                    ctx.log().note(format!("transfer succeeded: {trade}"));
                }
                Ok(TransferOutcome::Vetoed { reason }) => {
                    ctx.log().note(format!("warning: trade not applied ({reason}): {trade}"));
                    let actor = event.cause.actor.clone();
                    ctx.emit_observation(&actor, &format!("{INVALID_ACTION} {reason}"))?;
                }
                Err(err) => ctx.log().note(format!("warning: trade ignored: {err}")),
            }
        }
        Ok(())
    }

    fn grounded_state(&self) -> Option<serde_json::Value> {
        Some(self.state.snapshot())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn market() -> InventoryState {
        let mut inv = InventoryState::new(&names(&["Alice", "Bob"]), &names(&["beans"]), "coin");
        inv.endow("Alice", "coin", Amount::whole(5)).unwrap();
        inv.endow("Bob", "beans", Amount::whole(10)).unwrap();
        inv
    }

    #[test]
    fn transfer_within_balance() {
        let mut inv = market();
        let outcome = inv.apply_transfer("Alice", "Bob", "coin", Amount::whole(3)).unwrap();
        assert_eq!(outcome, TransferOutcome::Applied);
        assert_eq!(inv.balance("Alice", "coin").unwrap(), Amount::whole(2));
        assert_eq!(inv.balance("Bob", "coin").unwrap(), Amount::whole(3));
    }

    #[test]
    fn overspend_is_vetoed() {
        let mut inv = market();
        inv.apply_transfer("Alice", "Bob", "coin", Amount::whole(3)).unwrap();
        let before = inv.clone();
        let outcome = inv.apply_transfer("Alice", "Bob", "coin", Amount::whole(3)).unwrap();
        assert_eq!(outcome, TransferOutcome::Vetoed { reason: "insufficient coin".into() });
        assert_eq!(inv, before);
    }

    #[test]
    fn transfer_errors() {
        let mut inv = market();
        assert_eq!(
            inv.apply_transfer("Zed", "Bob", "coin", Amount::whole(1)),
            Err(InventoryError::UnknownPlayer("Zed".into()))
        );
        assert_eq!(
            inv.apply_transfer("Alice", "Bob", "gold", Amount::whole(1)),
            Err(InventoryError::UnknownItem("gold".into()))
        );
        assert!(matches!(
            inv.apply_transfer("Alice", "Bob", "coin", Amount::ZERO),
            Err(InventoryError::NonPositive(_))
        ));
    }

    #[test]
    fn trade_pair_is_atomic() {
        let mut inv = market();
        let trade = Trade {
            buyer: "Alice".into(),
            seller: "Bob".into(),
            item: "beans".into(),
            quantity: Amount::whole(3),
            price: Amount::whole(2),
        };
        assert_eq!(inv.apply_trade(&trade).unwrap(), TransferOutcome::Applied);
        assert_eq!(inv.balance("Alice", "beans").unwrap(), Amount::whole(3));
        assert_eq!(inv.balance("Bob", "beans").unwrap(), Amount::whole(7));
        assert_eq!(inv.balance("Alice", "coin").unwrap(), Amount::whole(3));
        assert_eq!(inv.balance("Bob", "coin").unwrap(), Amount::whole(2));

        let too_dear = Trade { price: Amount::whole(4), ..trade };
        let before = inv.clone();
        assert_eq!(
            inv.apply_trade(&too_dear).unwrap(),
            TransferOutcome::Vetoed { reason: "insufficient coin".into() }
        );
        assert_eq!(inv, before);
    }

    #[test]
    fn trade_grammar() {
        let players = names(&["Alice", "Bob", "Mary Ann"]);
        let items = names(&["coin", "beans", "magic beans"]);
        let trades = parse_trade_lines("TRADE Alice Bob beans 3 2", &players, &items).unwrap();
        assert_eq!(
            trades,
            vec![Trade {
                buyer: "Alice".into(),
                seller: "Bob".into(),
                item: "beans".into(),
                quantity: Amount::whole(3),
                price: Amount::whole(2),
            }]
        );
        let multi = parse_trade_lines("TRADE Mary Ann Bob magic beans 1 0.50\n", &players, &items).unwrap();
        assert_eq!(multi[0].buyer, "Mary Ann");
        assert_eq!(multi[0].item, "magic beans");
        assert_eq!(multi[0].price, Amount::from_hundredths(50));
        assert_eq!(parse_trade_lines(" NONE ", &players, &items).unwrap(), vec![]);
        let bad = [
            "",
            "NONE\nTRADE Alice Bob beans 1 1",
            "Alice bought beans",
            "TRADE Zed Bob beans 1 1",
            "TRADE Alice Bob gold 1 1",
            "TRADE Alice Bob beans 0 1",
            "TRADE Alice Bob beans 1",
            "TRADE Alice Alice beans 1 1",
            "TRADE Alice Bob beans 1 -1",
        ];
        for raw in bad {
            assert!(parse_trade_lines(raw, &players, &items).is_err(), "{raw:?}");
        }
    }

    #[test]
    fn describe_and_snapshot() {
        let inv = market();
        assert_eq!(inv.describe("Alice"), "Alice has 5 coin and 0 beans");
        assert_eq!(
            inv.snapshot(),
            serde_json::json!({
                "Alice": {"beans": "0.00", "coin": "5.00"},
                "Bob": {"beans": "10.00", "coin": "0.00"},
            })
        );
    }

    proptest! {
        #[test]
        fn transfers_conserve_and_stay_non_negative(
            ops in proptest::collection::vec((0usize..3, 0usize..3, 0usize..2, 1i64..800), 1..200)
        ) {
            let players = names(&["A", "B", "C"]);
            let mut inv = InventoryState::new(&players, &names(&["beans"]), "coin");
            for p in &players {
                inv.endow(p, "coin", Amount::whole(10)).unwrap();
                inv.endow(p, "beans", Amount::whole(4)).unwrap();
            }
            let items = ["coin", "beans"];
            let totals: Vec<Amount> = items.iter().map(|i| inv.total(i)).collect();
            for (from, to, item, qty) in ops {
                if from == to {
                    continue;
                }
                let available = inv.balance(&players[from], items[item]).unwrap();
                let qty = Amount::from_hundredths(qty);
                let outcome = inv.apply_transfer(&players[from], &players[to], items[item], qty).unwrap();
                prop_assert_eq!(outcome == TransferOutcome::Applied, available >= qty);
                for (i, item) in items.iter().enumerate() {
                    prop_assert_eq!(inv.total(item), totals[i]);
                    for p in &players {
                        prop_assert!(inv.balance(p, item).unwrap().hundredths() >= 0);
                    }
                }
            }
        }
    }
}
