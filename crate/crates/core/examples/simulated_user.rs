//! Walks one simulated user through a scripted exchange: a relevant
//! question, two irrelevant ones under tolerance 1, and shows where the user
//! gives up.
//!
//! cargo run --example simulated_user

use convrisk::corpus::{build_pools, PoolConfig};
use convrisk::synthetic::{topic_corpus, TopicCorpusConfig};
use convrisk::usersim::{AgentMove, Patience, UserProfile, UserResponse, UserState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = topic_corpus(&TopicCorpusConfig {
        conversations: 50,
        min_questions: 2,
        ..Default::default()
    });
    let conv = &corpus.conversations[0];
    let pool = build_pools(&corpus, conv, &PoolConfig { pool_size: 10, seed: 0 })?;
    let profile = UserProfile::new(1, Patience::Limited(3));
    let mut user = UserState::new(profile, conv, &pool)?;
    println!("query: {}", conv.query());
    println!("profile: tolerance {}, patience {}", profile.tolerance, profile.patience);

    let relevant = pool.positive_questions().next().expect("a positive question").clone();
    let irrelevant: Vec<_> = pool.question_candidates.iter().filter(|c| !c.is_positive).take(2).collect();
    let script = [&relevant, irrelevant[0], irrelevant[1]];
    for q in script {
        let judged = user.judge_question(q.id)?;
        let reply = user.respond(AgentMove::Ask(q.id))?;
        let shown = match &reply {
            UserResponse::Feedback(text) => format!("answers {text:?}"),
            UserResponse::Rejected => "tolerates it".to_owned(),
            UserResponse::Leave(reason) => format!("leaves ({reason:?})"),
            UserResponse::AnswerReceived => unreachable!(),
        };
        println!("ask {:?} (relevant: {judged}) -> user {shown}", q.text);
        if user.is_terminal() {
            break;
        }
    }
    println!(
        "answered {}, irrelevant seen {}, terminal {}",
        user.answered_questions(),
        user.irrelevant_seen(),
        user.is_terminal()
    );
    Ok(())
}
