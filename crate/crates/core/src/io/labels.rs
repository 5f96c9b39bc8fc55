/// Desikan-Killiany cortical labels for one hemisphere, in canonical order.
pub const DK_LABELS: [&str; 34] = [
    "bankssts",
    "caudalanteriorcingulate",
    "caudalmiddlefrontal",
    "cuneus",
    "entorhinal",
    "fusiform",
    "inferiorparietal",
    "inferiortemporal",
    "isthmuscingulate",
    "lateraloccipital",
    "lateralorbitofrontal",
    "lingual",
    "medialorbitofrontal",
    "middletemporal",
    "parahippocampal",
    "paracentral",
    "parsopercularis",
    "parsorbitalis",
    "parstriangularis",
    "pericalcarine",
    "postcentral",
    "posteriorcingulate",
    "precentral",
    "precuneus",
    "rostralanteriorcingulate",
    "rostralmiddlefrontal",
    "superiorfrontal",
    "superiorparietal",
    "superiortemporal",
    "supramarginal",
    "frontalpole",
    "temporalpole",
    "transversetemporal",
    "insula",
];

pub const NUM_REGIONS: usize = 2 * DK_LABELS.len();

/// The 68 canonical region column names: `lh_*` then `rh_*`.
pub fn canonical_region_labels() -> Vec<String> {
    ["lh", "rh"]
        .iter()
        .flat_map(|h| DK_LABELS.iter().map(move |l| format!("{h}_{l}")))
        .collect()
}

/// Index of a canonical label, if any.
pub fn region_index(label: &str) -> Option<usize> {
    let (hemi, name) = label.split_once('_')?;
    let offset = match hemi {
        "lh" => 0,
        "rh" => DK_LABELS.len(),
        _ => return None,
    };
    DK_LABELS.iter().position(|l| *l == name).map(|i| offset + i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixty_eight_unique_labels() {
        let labels = canonical_region_labels();
        assert_eq!(labels.len(), 68);
        let mut sorted = labels.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 68);
        assert_eq!(labels[0], "lh_bankssts");
        assert_eq!(labels[34], "rh_bankssts");
        for (i, l) in labels.iter().enumerate() {
            assert_eq!(region_index(l), Some(i));
        }
        assert_eq!(region_index("xh_insula"), None);
    }
}
