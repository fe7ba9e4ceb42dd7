use std::io::{BufRead, Write};

use histopattern::gateway::{decode_request, encode_response, oracle_classify, ClassifierConfig, OracleConfig};

use crate::error::{exit, CliError, CliResult};
use crate::Context;

/// Reference worker: answers each request line with the oracle's vector for
/// draw index = request id, flushing per line, until stdin closes.
pub fn run(ctx: &Context) -> CliResult<()> {
    let config = match &ctx.config.classifier {
        ClassifierConfig::Oracle(o) => o.clone(),
        ClassifierConfig::Worker(_) => OracleConfig::default(),
    };
    config.validate().map_err(|e| CliError::invalid(e.to_string()))?;
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line.map_err(|e| CliError::new(exit::OTHER, format!("stdin: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let request = decode_request(&line).map_err(|e| CliError::invalid(e.to_string()))?;
        let probs = oracle_classify(&request.image, &config, request.id);
        writeln!(stdout, "{}", encode_response(request.id, &probs))
            .and_then(|_| stdout.flush())
            .map_err(|e| CliError::new(exit::OTHER, format!("stdout: {e}")))?;
    }
    Ok(())
}
