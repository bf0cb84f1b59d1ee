use super::{ClusterError, EmbeddingMode};
use crate::artifact_io::EmbeddingMatrix;

/// Token representations for clustering. `Concat` joins the raw input and
/// output rows without per-half normalization.
pub fn build_representations(
    input: &EmbeddingMatrix,
    output: Option<&EmbeddingMatrix>,
    mode: EmbeddingMode,
) -> Result<EmbeddingMatrix, ClusterError> {
    let need_output = || output.ok_or(ClusterError::MissingOutputEmbeddings(mode));
    let check = |out: &EmbeddingMatrix| {
        if out.vocab_size() != input.vocab_size() {
            Err(ClusterError::VocabMismatch {
                expected: input.vocab_size(),
                found: out.vocab_size(),
                what: "output embedding rows",
            })
        } else {
            Ok(())
        }
    };
    match mode {
        EmbeddingMode::Input => Ok(input.clone()),
        EmbeddingMode::Output => {
            let out = need_output()?;
            check(out)?;
            Ok(out.clone())
        }
        EmbeddingMode::Concat => {
            let out = need_output()?;
            check(out)?;
            let dim = input.dim() + out.dim();
            let mut data = Vec::with_capacity(input.vocab_size() * dim);
            for (a, b) in input.rows().zip(out.rows()) {
                data.extend_from_slice(a);
                data.extend_from_slice(b);
            }
            Ok(EmbeddingMatrix::new(input.vocab_size(), dim, data)
                .expect("concatenation of valid matrices is valid"))
        }
    }
}
