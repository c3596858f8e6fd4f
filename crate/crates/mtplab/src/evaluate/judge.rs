//! LLM-judge scoring over a chat-completion HTTP endpoint.
//!
//! The judge receives a fixed rubric prompt with three fill slots — input,
//! model output, and target continuation — and answers with a 1–5 quality
//! score. When the endpoint returns per-token alternatives for the score
//! position, the final score is the probability-weighted mean over the five
//! digit tokens; otherwise the parsed integer is used and the result is
//! marked unweighted.
//!
//! Only the HTTP call itself (and [`g_eval`]) sits behind the `judge`
//! feature; the prompt plumbing and reply parsing are plain functions so
//! they stay testable everywhere. The client speaks plain HTTP, which is
//! fine for the expected localhost/LAN judge deployments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slot markers the template must contain; [`JudgeConfig::fill`] replaces
/// every occurrence.
pub const INPUT_SLOT: &str = "{Input Sequence}";
pub const OUTPUT_SLOT: &str = "{Output Sequence}";
pub const TARGET_SLOT: &str = "{Target Sequence}";

/// Default rubric prompt: rate how well an output continues the input and
/// aligns with the target, on a 1–5 scale, answering with the score only.
pub const JUDGE_PROMPT_TEMPLATE: &str = "\
You will be given a sequence triplet consisting of:
1. An input sequence (text or code) that serves as the starting point.
2. An output sequence written as a continuation of the input.
3. A target sequence that represents the expected continuation of the input sequence.

Your task is to rate the written output sequence on one metric.

Please make sure you read and understand these instructions carefully. Keep this document open while reviewing, and refer to it as needed.

Evaluation Criteria:

Overall Quality (1-5) - how well does the output sequence continue the input sequence and align with the target sequence?
- A score of 5 means that the output sequence is excellent. It provides a seamless continuation of the input sequence, closely aligns with the target sequence, and avoids any repetitions, irrelevant passages, or major errors.
- A score of 4 means that the output sequence is good. It continues the input sequence well and mostly aligns with the target sequence, but may include minor errors or imperfections, such as slight incoherence or small structural issues.
- A score of 3 means that the output sequence is acceptable. It maintains some relevance to the input sequence and partial alignment with the target sequence, but contains noticeable flaws, such as incoherence, repetitions, or deviations that reduce its quality.
- A score of 2 means that the output sequence is poor. It struggles to continue the input sequence coherently or deviates significantly from the target sequence, with major errors, irrelevant sections, or repeated patterns.
- A score of 1 means that the output sequence is invalid. It fails to continue the input sequence meaningfully, shows no alignment with the target sequence, or is completely incoherent.

Evaluation Steps:
1. Carefully read the input, output, and target sequences.
2. Compare the output sequence to both the input sequence (continuity) and the target sequence (alignment).
3. Rate the output on a scale of 1-5 for Quality, according to the criteria above.

### Input Sequence:

{Input Sequence}

### Output Sequence:

{Output Sequence}

### Target Sequence:

{Target Sequence}

Evaluation Form (scores ONLY):

- Quality:";

fn default_template() -> String {
    JUDGE_PROMPT_TEMPLATE.to_string()
}

fn default_timeout_secs() -> u64 {
    30
}

/// Judge endpoint settings. `base_url` is the server root; the client posts
/// to `{base_url}/v1/chat/completions`. `token_env` names the environment
/// variable holding the bearer token — leave it empty for unauthenticated
/// (local) endpoints; a named but unset variable is an error at call time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub token_env: String,
    #[serde(default = "default_template")]
    pub template: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

impl JudgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_url.is_empty() {
            return Err(Error::Config("judge base_url is empty".into()));
        }
        if self.model.is_empty() {
            return Err(Error::Config("judge model is empty".into()));
        }
        if self.timeout_secs == 0 {
            return Err(Error::Config("judge timeout_secs must be at least 1".into()));
        }
        for slot in [INPUT_SLOT, OUTPUT_SLOT, TARGET_SLOT] {
            if !self.template.contains(slot) {
                return Err(Error::Config(format!("judge template is missing the {slot} slot")));
            }
        }
        Ok(())
    }

    /// The rubric prompt with all three slots filled.
    pub fn fill(&self, input: &str, output: &str, target: &str) -> String {
        self.template
            .replace(INPUT_SLOT, input)
            .replace(OUTPUT_SLOT, output)
            .replace(TARGET_SLOT, target)
    }
}

/// A judge verdict. `weighted` is false when the endpoint returned no usable
/// token probabilities and `score` is the parsed integer instead of the
/// probability-weighted mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JudgeScore {
    pub score: f64,
    pub weighted: bool,
}

/// Probability-weighted score over the digit tokens "1".."5" given `(token,
/// ln p)` alternatives for the score position. Probabilities are renormalized
/// over the digit tokens that actually appear (whitespace-trimmed; duplicates
/// accumulate). `None` when no digit token carries mass.
pub fn weighted_digit_score(alternatives: &[(String, f64)]) -> Option<f64> {
    let mut mass = [0.0f64; 5];
    for (token, logprob) in alternatives {
        if let Some(digit) = score_digit(token) {
            mass[digit - 1] += logprob.exp();
        }
    }
    let z: f64 = mass.iter().sum();
    if z <= 0.0 {
        return None;
    }
    Some(mass.iter().enumerate().map(|(i, &p)| (i + 1) as f64 * p / z).sum())
}

/// The 1–5 value of a token that is exactly one score digit, else None.
fn score_digit(token: &str) -> Option<usize> {
    match token.trim() {
        "1" => Some(1),
        "2" => Some(2),
        "3" => Some(3),
        "4" => Some(4),
        "5" => Some(5),
        _ => None,
    }
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
    #[serde(default)]
    logprobs: Option<ChatLogprobs>,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

#[derive(Deserialize)]
struct ChatLogprobs {
    #[serde(default)]
    content: Vec<TokenLogprob>,
}

#[derive(Deserialize)]
struct TokenLogprob {
    token: String,
    #[serde(default)]
    top_logprobs: Vec<TopLogprob>,
}

#[derive(Deserialize)]
struct TopLogprob {
    token: String,
    logprob: f64,
}

/// Extracts a [`JudgeScore`] from a chat-completion reply body. Prefers the
/// probability-weighted mean over the alternatives reported at the first
/// score-digit token; falls back to the first digit in the message text,
/// marked unweighted. Parse failures keep the raw payload in the error.
pub fn parse_judge_reply(body: &str) -> Result<JudgeScore> {
    let reply: ChatReply = serde_json::from_str(body)
        .map_err(|e| Error::Judge(format!("unparseable reply ({e}); raw payload: {body}")))?;
    let choice = reply
        .choices
        .first()
        .ok_or_else(|| Error::Judge(format!("reply has no choices; raw payload: {body}")))?;

    if let Some(logprobs) = &choice.logprobs {
        for position in &logprobs.content {
            if score_digit(&position.token).is_none() {
                continue;
            }
            let alternatives: Vec<(String, f64)> = position
                .top_logprobs
                .iter()
                .map(|t| (t.token.clone(), t.logprob))
                .collect();
            if let Some(score) = weighted_digit_score(&alternatives) {
                return Ok(JudgeScore { score, weighted: true });
            }
            break; // score position found but no usable alternatives
        }
    }

    match choice.message.content.chars().find(char::is_ascii_digit) {
        Some(c @ '1'..='5') => Ok(JudgeScore { score: f64::from(c as u8 - b'0'), weighted: false }),
        _ => Err(Error::Judge(format!(
            "no 1-5 score in reply; raw payload: {body}"
        ))),
    }
}

/// Scores one (input, output, target) triplet through the configured judge
/// endpoint. Asks for per-token alternatives (`logprobs`/`top_logprobs`) so
/// the score can be probability-weighted; see [`parse_judge_reply`] for the
/// fallback. Network, auth, HTTP-status, and parse failures are all errors —
/// there is no partial score.
#[cfg(feature = "judge")]
pub fn g_eval(config: &JudgeConfig, input: &str, output: &str, target: &str) -> Result<JudgeScore> {
    config.validate()?;
    let token = if config.token_env.is_empty() {
        None
    } else {
        Some(std::env::var(&config.token_env).map_err(|_| {
            Error::Judge(format!(
                "auth token environment variable `{}` is not set",
                config.token_env
            ))
        })?)
    };
    let client = reqwest::blocking::Client::builder()
        .timeout(std::time::Duration::from_secs(config.timeout_secs))
        .build()
        .map_err(|e| Error::Judge(format!("client setup failed: {e}")))?;
    let url = format!("{}/v1/chat/completions", config.base_url.trim_end_matches('/'));
    let body = serde_json::json!({
        "model": config.model,
        "messages": [{ "role": "user", "content": config.fill(input, output, target) }],
        "max_tokens": 4,
        "temperature": 0.0,
        "logprobs": true,
        "top_logprobs": 20,
    });
    let mut request = client.post(url).json(&body);
    if let Some(token) = token {
        request = request.bearer_auth(token);
    }
    let response = request.send().map_err(|e| Error::Judge(format!("request failed: {e}")))?;
    let status = response.status();
    let text = response
        .text()
        .map_err(|e| Error::Judge(format!("reading reply failed: {e}")))?;
    if !status.is_success() {
        return Err(Error::Judge(format!("endpoint returned {status}: {text}")));
    }
    parse_judge_reply(&text)
}
