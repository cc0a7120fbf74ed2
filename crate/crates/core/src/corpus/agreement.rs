use super::{token_classes, AnnotatedDocument, CorpusError, SegmentLabel};

/// Row/column names of the confusion matrix: the six labels, then O.
pub const AGREEMENT_CLASSES: [&str; 7] = ["CC", "CO", "ES", "FC", "SS", "PU", "O"];

#[derive(Debug, Clone, PartialEq)]
pub struct AgreementReport {
    pub kappa: f64,
    /// `confusion[x][y]`: tokens labelled `x` by the first annotator and `y`
    /// by the second.
    pub confusion: [[u64; 7]; 7],
}

/// Word-level Cohen's kappa between two annotations of the same documents.
/// Span labels are projected onto tokens, gaps count as O.
pub fn agreement(
    a: &[AnnotatedDocument],
    b: &[AnnotatedDocument],
) -> Result<AgreementReport, CorpusError> {
    if a.len() != b.len() {
        return Err(CorpusError::MismatchedDocuments(format!(
            "{} vs {} documents",
            a.len(),
            b.len()
        )));
    }
    let mut confusion = [[0u64; 7]; 7];
    for (da, db) in a.iter().zip(b) {
        if da.id != db.id {
            return Err(CorpusError::MismatchedDocuments(format!(
                "document ids {:?} and {:?}",
                da.id, db.id
            )));
        }
        if da.tokens != db.tokens {
            return Err(CorpusError::MismatchedDocuments(format!(
                "tokenization of {:?} differs",
                da.id
            )));
        }
        let n = da.tokens.len();
        for (x, y) in token_classes(&da.spans, n)
            .into_iter()
            .zip(token_classes(&db.spans, n))
        {
            confusion[x][y] += 1;
        }
    }
    debug_assert_eq!(SegmentLabel::ALL.len() + 1, AGREEMENT_CLASSES.len());
    Ok(AgreementReport {
        kappa: cohen_kappa(&confusion),
        confusion,
    })
}

/// `(p_o - p_e) / (1 - p_e)` from a square count matrix, evaluated in exact
/// integer arithmetic and rounded once. Perfect agreement gives 1 even when
/// chance agreement is also 1; an empty matrix gives 0.
pub fn cohen_kappa<const K: usize>(confusion: &[[u64; K]; K]) -> f64 {
    let total: u128 = confusion.iter().flatten().map(|&c| c as u128).sum();
    if total == 0 {
        return 0.0;
    }
    let diag: u128 = (0..K).map(|i| confusion[i][i] as u128).sum();
    let chance: u128 = (0..K)
        .map(|i| {
            let row: u128 = confusion[i].iter().map(|&c| c as u128).sum();
            let col: u128 = confusion.iter().map(|r| r[i] as u128).sum();
            row * col
        })
        .sum();
    let denom = total * total - chance;
    if denom == 0 {
        return 1.0;
    }
    let numer = (total * diag) as i128 - chance as i128;
    numer as f64 / denom as f64
}
