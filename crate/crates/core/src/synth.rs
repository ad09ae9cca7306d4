//! Deterministic synthetic corpus generator. Every user is assigned a home
//! category and only ever clicks items from it (with a popularity-skewed
//! head), while shown-not-clicked items come from other categories — so a
//! working engine can recover the preference and a broken one cannot.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::EngineError;
use crate::Result;

/// Corpus shape. Click counts per user equal `impressions_per_user`, so
/// keep that at three or more for leave-one-out evaluation to have users.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub users: usize,
    pub news: usize,
    pub categories: usize,
    pub impressions_per_user: usize,
    pub shown_per_impression: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            users: 50,
            news: 300,
            categories: 6,
            impressions_per_user: 6,
            shown_per_impression: 4,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub news_tsv: String,
    pub behaviors_tsv: String,
    pub roles_tsv: String,
}

const BASE_TIME: i64 = 1_700_000_000;
const SOURCES: [&str; 5] = ["wire", "desk", "ledger", "bulletin", "gazette"];

fn category_name(c: usize) -> String {
    format!("topic{c:02}")
}

/// Popularity-skewed index in `0..len`: the minimum of two uniform draws,
/// which makes low (head) indices quadratically more likely.
fn head_biased(rng: &mut ChaCha8Rng, len: usize) -> usize {
    let a = rng.random_range(0..len);
    let b = rng.random_range(0..len);
    a.min(b)
}

pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    if spec.users == 0 || spec.news == 0 || spec.categories == 0 {
        return Err(EngineError::Config(
            "synthetic corpus needs at least one user, item, and category".into(),
        ));
    }
    if spec.news < spec.categories {
        return Err(EngineError::Config(
            "synthetic corpus needs at least one item per category".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // News catalog: item i belongs to category i % categories; titles carry
    // the category token plus unique filler words.
    let mut news_tsv = String::new();
    let mut category_pool: Vec<Vec<usize>> = vec![Vec::new(); spec.categories];
    for i in 0..spec.news {
        let cat = i % spec.categories;
        category_pool[cat].push(i);
        let publish = BASE_TIME - rng.random_range(0..72 * 3600i64);
        let title = format!(
            "{} report{} briefing{} update{}",
            category_name(cat),
            i,
            rng.random_range(0..10_000u32),
            rng.random_range(0..10_000u32),
        );
        let source = SOURCES[rng.random_range(0..SOURCES.len())];
        writeln!(
            news_tsv,
            "n{i:05}\t{}\tsub{cat:02}\t{title}\tsynthetic abstract {i}\t{source}\t{publish}",
            category_name(cat),
        )
        .expect("writing to a string cannot fail");
    }

    // Behaviors: one click per impression, drawn without replacement from
    // the user's home-category pool (head-biased), plus shown items from
    // other categories.
    let mut behaviors_tsv = String::new();
    let mut roles_tsv = String::new();
    for u in 0..spec.users {
        let home = u % spec.categories;
        if u % 10 == 0 {
            writeln!(roles_tsv, "u{u:04}\tsenior {} analyst", category_name(home))
                .expect("writing to a string cannot fail");
        }
        let mut unclicked: Vec<usize> = category_pool[home].clone();
        for imp in 0..spec.impressions_per_user {
            let ts = BASE_TIME + (imp as i64) * 3600 + (u as i64) * 7;
            let mut tokens = Vec::with_capacity(1 + spec.shown_per_impression);
            if unclicked.is_empty() {
                // Home pool exhausted; recycle so every impression clicks.
                unclicked = category_pool[home].clone();
            }
            let pick = head_biased(&mut rng, unclicked.len());
            let clicked = unclicked.remove(pick);
            tokens.push(format!("n{clicked:05}-1"));
            for _ in 0..spec.shown_per_impression {
                if spec.categories == 1 {
                    break; // no foreign categories to show
                }
                let mut cat = rng.random_range(0..spec.categories);
                if cat == home {
                    cat = (cat + 1) % spec.categories;
                }
                let item = category_pool[cat][head_biased(&mut rng, category_pool[cat].len())];
                tokens.push(format!("n{item:05}-0"));
            }
            writeln!(
                behaviors_tsv,
                "imp{u:04}x{imp:03}\tu{u:04}\t{ts}\t\t{}",
                tokens.join(" "),
            )
            .expect("writing to a string cannot fail");
        }
    }
    Ok(SynthCorpus {
        news_tsv,
        behaviors_tsv,
        roles_tsv,
    })
}

impl SynthCorpus {
    /// Writes news.tsv, behaviors.tsv, and roles.tsv into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(PathBuf, PathBuf, PathBuf)> {
        fs::create_dir_all(dir).map_err(EngineError::io(format!(
            "creating corpus directory {}",
            dir.display()
        )))?;
        let write = |name: &str, body: &str| -> Result<PathBuf> {
            let path = dir.join(name);
            fs::write(&path, body)
                .map_err(EngineError::io(format!("writing {}", path.display())))?;
            Ok(path)
        };
        Ok((
            write("news.tsv", &self.news_tsv)?,
            write("behaviors.tsv", &self.behaviors_tsv)?,
            write("roles.tsv", &self.roles_tsv)?,
        ))
    }
}
