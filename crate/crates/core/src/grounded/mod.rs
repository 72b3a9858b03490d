//! Game master components for grounded variables: money and possessions,
//! player locations, and questionnaires.

mod amount;
mod inventory;
mod location;
mod questionnaire;

pub use amount::{Amount, AmountParseError};
pub use inventory::{
    extract_trades, parse_trade_lines, InventoryComponent, InventoryError, InventoryState,
    Trade, TradeParseError, TransferOutcome, DEFAULT_CURRENCY, TRADE_EXTRACTION_PROMPT,
};
pub use location::{
    normalize_location, LocationComponent, LocationError, LocationState, LOCATION_QUESTION,
};
pub use questionnaire::{
    Answer, AnswerSheet, Question, Questionnaire, QuestionnaireError, NO_RESPONSE,
};
