//! Scenario builders shared by the integration tests. Each writes a
//! complete run directory (task file, mock table, corpus or search fixtures,
//! config) and returns the loaded config.

#![allow(dead_code)]

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use webaug::corpus::Passage;
use webaug::generator::{Distribution, MockModel};
use webaug::pipeline::RunConfig;
use webaug::retrieval::{FixtureItem, FixtureSearch};
use webaug::unification::{render_prompt, write_task_file, Family, TaskExample};

pub fn load(path: &Path) -> RunConfig {
    RunConfig::load_with_env(path, Some(HashMap::new())).expect("config loads")
}

fn write_config(dir: &Path, body: &str) -> RunConfig {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    load(&path)
}

pub fn qa_example(id: &str, task: &str, input: &str, gold: &str) -> TaskExample {
    TaskExample {
        example_id: id.into(),
        task: task.into(),
        family: Family::OpenDomainQa,
        input_text: input.into(),
        options: vec![],
        gold_outputs: vec![gold.into()],
    }
}

/// `n` wrong answers with equal mass: entropy exactly `ln n`.
pub fn distractors(tag: &str, n: usize) -> Distribution {
    Distribution::uniform(&format!("{tag}-guess"), n)
}

pub const SQUID_QUESTION: &str =
    "Which popular Korean show was recently green lit for a new season?";
pub const SQUID_URL: &str = "https://www.cnn.com/2022/06/12/media/squid-game-season-2/index.html";
pub const SQUID_P1: &str = "Netflix announced Sunday that the wildly popular South Korean show is green lit for a second season.";
pub const SQUID_P2: &str = "\"Squid Game\" is a fictional drama from South Korea in which contestants who are desperately in need of money play deadly children's games to win cash prizes.";

pub fn squid_example() -> TaskExample {
    qa_example("squid", "realtime", SQUID_QUESTION, "Squid Game")
}

/// The Korean-show question: the closed-book model favors "The Walking
/// Dead" but is unsure; with the news page as context it says "Squid Game".
pub fn squid_game(dir: &Path) -> RunConfig {
    let ex = squid_example();
    write_task_file(&dir.join("tasks.jsonl"), std::slice::from_ref(&ex)).unwrap();

    let html = format!(
        "<html><head><title>CNN</title><script>var x;</script></head>\
         <body><nav>Menu</nav><p>{SQUID_P1}</p><p>{}</p></body></html>",
        SQUID_P2.replace('"', "&quot;")
    );
    FixtureSearch::store(
        &dir.join("fixtures"),
        SQUID_QUESTION,
        vec![FixtureItem {
            link: SQUID_URL.into(),
            html: Some(html),
        }],
    )
    .unwrap();

    let mut closed = vec![("The Walking Dead".to_string(), 0.1)];
    closed.extend((0..180).map(|i| (format!("show{i}"), 0.9 / 180.0)));
    // "Menu" is a separate paragraph before the article text.
    let evidence = Passage::new(SQUID_URL, 0, format!("Menu {SQUID_P1} {SQUID_P2}"));
    let model = MockModel::new()
        .with(
            render_prompt(&ex, &[]).unwrap().text,
            Distribution::new(closed).unwrap(),
        )
        .with(
            render_prompt(&ex, &[evidence]).unwrap().text,
            Distribution::point("Squid Game"),
        )
        .with("*", distractors("other", 100));
    model.save(&dir.join("mock.json")).unwrap();

    write_config(
        dir,
        r#"
generator_endpoint = "mock.json"
output_dir = "out"
task_files = ["tasks.jsonl"]
seed = 1

[retrieval]
backend = "fixture"
fixture_dir = "fixtures"
k = 5
"#,
    )
}

/// `n` questions over a local corpus where document `i` holds answer `i`.
/// The first `confident` questions are answered correctly closed-book with
/// certainty; the rest are uniform over 100 wrong guesses until their own
/// document is in the prompt.
pub fn qa_suite(dir: &Path, n: usize, confident: usize, workers: usize) -> RunConfig {
    let mut corpus = String::new();
    let mut examples = Vec::new();
    let mut model = MockModel::new().with("*", distractors("any", 100));
    for i in 0..n {
        let text = format!("topic{i} facts: the answer to question {i} is answer{i}");
        corpus.push_str(&serde_json::json!({"id": format!("doc{i:02}"), "text": text}).to_string());
        corpus.push('\n');
        let ex = qa_example(
            &format!("q{i:02}"),
            if i % 2 == 0 { "nq" } else { "tqa" },
            &format!("what is the answer about topic{i}"),
            &format!("answer{i}"),
        );
        let closed = render_prompt(&ex, &[]).unwrap().text;
        if i < confident {
            model.insert(closed, Distribution::point(format!("answer{i}")));
        } else {
            model.insert(closed, distractors(&format!("q{i}"), 100));
        }
        let passage = Passage::new(format!("doc{i:02}"), 0, text);
        model.insert(
            render_prompt(&ex, &[passage]).unwrap().text,
            Distribution::point(format!("answer{i}")),
        );
        examples.push(ex);
    }
    fs::write(dir.join("corpus.jsonl"), corpus).unwrap();
    write_task_file(&dir.join("tasks.jsonl"), &examples).unwrap();
    model.save(&dir.join("mock.json")).unwrap();
    write_config(
        dir,
        &format!(
            r#"
generator_endpoint = "mock.json"
corpus_path = "corpus.jsonl"
index_path = "index"
output_dir = "out"
task_files = ["tasks.jsonl"]
seed = 3
workers = {workers}

[retrieval]
k = 3

[ckl]
gazetteer = ["answer0", "answer5", "answer7"]
"#
        ),
    )
}

/// `low + high` questions whose closed-book tables are uniform over `n`
/// outcomes: `n <= 54` for the confident ones (ln 54 < 4) and `n >= 55` for
/// the rest (ln 55 > 4). Search fixtures exist for every question.
pub fn gate_suite(dir: &Path, low: usize, high: usize) -> (RunConfig, Vec<bool>) {
    let mut examples = Vec::new();
    let mut expected = Vec::new();
    let mut model = MockModel::new().with("*", Distribution::point("unknown"));
    for i in 0..low + high {
        let retrieve = i >= low;
        let ex = qa_example(
            &format!("g{i:02}"),
            "gate",
            &format!("gate question {i}"),
            "x",
        );
        let n = if retrieve {
            55 + 5 * (i - low)
        } else {
            1 + 53 * i / low.max(1)
        };
        model.insert(
            render_prompt(&ex, &[]).unwrap().text,
            Distribution::uniform(&format!("g{i}"), n),
        );
        FixtureSearch::store(
            &dir.join("fixtures"),
            &ex.input_text,
            vec![FixtureItem {
                link: format!("https://site{i}.test/page"),
                html: Some(format!("<p>page for gate question {i}</p>")),
            }],
        )
        .unwrap();
        examples.push(ex);
        expected.push(retrieve);
    }
    write_task_file(&dir.join("tasks.jsonl"), &examples).unwrap();
    model.save(&dir.join("mock.json")).unwrap();
    let config = write_config(
        dir,
        r#"
generator_endpoint = "mock.json"
output_dir = "out"
task_files = ["tasks.jsonl"]
workers = 4

[retrieval]
backend = "fixture"
fixture_dir = "fixtures"

[confidence]
entropy_threshold = 4.0
n_samples = 50
"#,
    );
    (config, expected)
}
