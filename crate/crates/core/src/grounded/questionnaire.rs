use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::agent::AgentError;
use crate::gm::{GameMaster, GmError};
use crate::kernel::{ActionSpec, RecordKind, SpecError, TraceRecord};

pub const NO_RESPONSE: &str = "no-response";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub spec: ActionSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub question: String,
    pub answer: String,
}

/// Answers of one player to one administration of a questionnaire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSheet {
    pub questionnaire: String,
    pub player: String,
    /// 1 for the first administration to this player.
    pub administration: u32,
    pub answers: Vec<Answer>,
}

#[derive(Debug, thiserror::Error)]
pub enum QuestionnaireError {
    #[error("questionnaire has no questions")]
    Empty,
    #[error("duplicate question id {0:?}")]
    DuplicateId(String),
    #[error("question {id}: {source}")]
    InvalidSpec {
        id: String,
        #[source]
        source: SpecError,
    },
}

/// A fixed list of questions posed to players outside the game clock.
#[derive(Debug, Clone)]
pub struct Questionnaire {
    name: String,
    questions: Vec<Question>,
    sheets: Vec<AnswerSheet>,
}

impl Questionnaire {
    pub fn new(name: impl Into<String>, questions: Vec<Question>) -> Result<Self, QuestionnaireError> {
        if questions.is_empty() {
            return Err(QuestionnaireError::Empty);
        }
        let mut ids = BTreeSet::new();
        for q in &questions {
            if !ids.insert(q.id.clone()) {
                return Err(QuestionnaireError::DuplicateId(q.id.clone()));
            }
            q.spec.validate().map_err(|source| QuestionnaireError::InvalidSpec {
                id: q.id.clone(),
                source,
            })?;
        }
        Ok(Questionnaire {
            name: name.into(),
            questions,
            sheets: Vec::new(),
        })
    }

    /// One five-point agreement item per statement, ids "q1", "q2", ...
    pub fn likert<S: AsRef<str>>(name: impl Into<String>, statements: &[S]) -> Result<Self, QuestionnaireError> {
        let questions = statements
            .iter()
            .enumerate()
            .map(|(i, s)| Question {
                id: format!("q{}", i + 1),
                spec: ActionSpec::likert(s.as_ref()),
            })
            .collect();
        Self::new(name, questions)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    /// Every sheet collected so far, in administration order.
    pub fn sheets(&self) -> &[AnswerSheet] {
        &self.sheets
    }

    /// Poses every question to `player` without advancing the clock. Each
    /// item becomes one questionnaire record in the game master's trace.
    pub fn administer(&mut self, gm: &mut GameMaster, player: &str) -> Result<AnswerSheet, GmError> {
        let agent = gm.player(player)?;
        let now = gm.clock().now();
        let step = gm.clock().step();
        let log = gm.model().log().clone();
        let administration = 1 + self.sheets.iter().filter(|s| s.player == player).count() as u32;
        let mut answers = Vec::with_capacity(self.questions.len());
        for question in &self.questions {
            log.push_frame();
            let mut record = TraceRecord::new(RecordKind::Questionnaire, 0, step, now);
            record.actor = Some(player.to_string());
            record.notes.push(format!(
                "questionnaire {} item {} (administration {administration})",
                self.name, question.id
            ));
            let result = {
                let mut agent = agent.lock();
                let context = agent.context_of_action(&question.spec, now);
                record.agent_components = context.sections;
                record.prompts.push(context.prompt);
                agent.act(&question.spec, now)
            };
            let answer = match result {
                Ok(action) => action.text,
                Err(AgentError::InvalidModelOutput(err)) => {
                    record.notes.push(format!("no usable answer: {err}"));
                    NO_RESPONSE.to_string()
                }
                Err(source) => {
                    record.absorb(log.pop_frame());
                    gm.emit_record(record);
                    return Err(GmError::Agent {
                        player: player.to_string(),
                        source,
                    });
                }
            };
            record.action = Some(answer.clone());
            record.absorb(log.pop_frame());
            gm.emit_record(record);
            answers.push(Answer {
                question: question.id.clone(),
                answer,
            });
        }
        let sheet = AnswerSheet {
            questionnaire: self.name.clone(),
            player: player.to_string(),
            administration,
            answers,
        };
        self.sheets.push(sheet.clone());
        Ok(sheet)
    }
}
