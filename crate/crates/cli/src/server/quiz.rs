//! Caption-guessing sessions: the client sees four captions and may
//! explore concept saliency on a hidden image, but never its pixels.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use convis_core::Image;
use parking_lot::Mutex;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Deserialize)]
struct ItemFile {
    image: String,
    captions: Vec<String>,
    answer: usize,
}

pub struct QuizItem {
    pub image: Arc<Image>,
    pub captions: [String; 4],
    pub answer: usize,
}

/// Operator-provided quiz data: `[{"image", "captions": [4], "answer"}]`
/// with image paths relative to the file.
pub fn load_quiz(path: &Path) -> Result<Vec<QuizItem>> {
    let items: Vec<ItemFile> =
        serde_json::from_slice(&std::fs::read(path).with_context(|| format!("reading {}", path.display()))?)
            .with_context(|| format!("parsing {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    items
        .into_iter()
        .enumerate()
        .map(|(i, it)| {
            let captions: [String; 4] = it
                .captions
                .try_into()
                .map_err(|_| anyhow::anyhow!("quiz item {i}: exactly four captions required"))?;
            if it.answer >= 4 {
                bail!("quiz item {i}: answer must be 0..3");
            }
            let img_path = base.join(&it.image);
            let image = Image::open(&img_path).with_context(|| format!("quiz item {i}: {}", img_path.display()))?;
            Ok(QuizItem {
                image: Arc::new(image),
                captions,
                answer: it.answer,
            })
        })
        .collect()
}

struct Session {
    item: usize,
    captions: [String; 4],
    correct: usize,
    answer: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub choice: usize,
    pub correct: bool,
    pub correct_choice: usize,
}

/// What the client may see. The correct index appears only after answering.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionView {
    pub id: String,
    pub captions: Vec<String>,
    pub answered: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
}

#[derive(Debug, PartialEq, Eq)]
pub enum AnswerError {
    UnknownSession,
    AlreadyAnswered,
    BadChoice,
}

pub struct Quiz {
    items: Vec<QuizItem>,
    sessions: Mutex<HashMap<String, Session>>,
    rng: Mutex<StdRng>,
}

impl Quiz {
    pub fn new(items: Vec<QuizItem>, seed: Option<u64>) -> Self {
        let rng = match seed {
            Some(s) => StdRng::seed_from_u64(s),
            None => StdRng::from_os_rng(),
        };
        Self {
            items,
            sessions: Mutex::new(HashMap::new()),
            rng: Mutex::new(rng),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn view(id: &str, s: &Session) -> SessionView {
        SessionView {
            id: id.to_owned(),
            captions: s.captions.to_vec(),
            answered: s.answer.is_some(),
            outcome: s.answer.map(|choice| Outcome {
                choice,
                correct: choice == s.correct,
                correct_choice: s.correct,
            }),
        }
    }

    /// Draws an item and shuffles its captions. `None` without items.
    pub fn start(&self) -> Option<SessionView> {
        if self.items.is_empty() {
            return None;
        }
        let (id, session) = {
            let mut rng = self.rng.lock();
            let item = rng.random_range(0..self.items.len());
            let mut order = [0usize, 1, 2, 3];
            order.shuffle(&mut *rng);
            let src = &self.items[item];
            let captions = order.map(|k| src.captions[k].clone());
            let correct = order.iter().position(|&k| k == src.answer).expect("answer < 4");
            let id = format!("{:032x}", rng.random::<u128>());
            (
                id,
                Session {
                    item,
                    captions,
                    correct,
                    answer: None,
                },
            )
        };
        let view = Self::view(&id, &session);
        self.sessions.lock().insert(id, session);
        Some(view)
    }

    pub fn get(&self, id: &str) -> Option<SessionView> {
        self.sessions.lock().get(id).map(|s| Self::view(id, s))
    }

    /// Hidden image of a session, for server-side computations only.
    pub fn image(&self, id: &str) -> Option<Arc<Image>> {
        let item = self.sessions.lock().get(id)?.item;
        Some(self.items[item].image.clone())
    }

    pub fn answer(&self, id: &str, choice: usize) -> Result<SessionView, AnswerError> {
        let mut sessions = self.sessions.lock();
        let s = sessions.get_mut(id).ok_or(AnswerError::UnknownSession)?;
        if s.answer.is_some() {
            return Err(AnswerError::AlreadyAnswered);
        }
        if choice >= 4 {
            return Err(AnswerError::BadChoice);
        }
        s.answer = Some(choice);
        Ok(Self::view(id, s))
    }
}
