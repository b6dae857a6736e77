//! Turns raw event and static tables into a tokenized cohort: lab values
//! are imputed and quantile-binned, rare codes pool into RARE tokens.

use fairsynth::preprocess::{
    preprocess, read_events_csv, read_statics_csv, PreprocessConfig,
};

fn main() -> anyhow::Result<()> {
    env_logger::init();

    let dir = std::env::temp_dir().join("fairsynth_preprocess_demo");
    std::fs::create_dir_all(&dir)?;
    let events_path = dir.join("events.csv");
    let statics_path = dir.join("statics.csv");

    let mut events = String::from("patient_id,visit,variable,value\n");
    for i in 0..30 {
        let pid = format!("p{:02}", i % 10);
        events.push_str(&format!("{pid},{},diag:D{:02},\n", i / 10, i % 7));
        events.push_str(&format!("{pid},{},glucose,{}\n", i / 10, 80 + 3 * i));
    }
    // A missing lab value, forward-filled by the default policy.
    events.push_str("p00,2,glucose,\n");
    events.push_str("p00,2,diag:D01,\n");
    std::fs::write(&events_path, events)?;

    let mut statics = String::from("patient_id,attribute,value\n");
    for i in 0..10 {
        let eth = if i % 3 == 0 { "BLACK/AFRICAN AMERICAN" } else { "WHITE" };
        statics.push_str(&format!("p{i:02},ethnicity,{eth}\n"));
        statics.push_str(&format!("p{i:02},outcome,{}\n", (i % 4 == 0) as u8));
    }
    std::fs::write(&statics_path, statics)?;

    let events = read_events_csv(&events_path)?;
    let statics = read_statics_csv(&statics_path)?;
    println!("read {} event rows and {} static rows", events.len(), statics.len());

    let config = PreprocessConfig { n_lab_bins: 4, ..PreprocessConfig::default() };
    let cohort = preprocess(events, statics, &config, 2)?;

    println!("\ncohort: {} records, vocabulary {} entries", cohort.len(), cohort.vocabulary.len());
    println!("group counts: {:?}", cohort.group_counts("ethnicity")?);

    let r = &cohort.records[0];
    println!("\nrecord {} ({} visits, outcome {})", r.patient_id, r.visits.len(), r.outcome);
    for (i, visit) in r.visits.iter().enumerate() {
        let tokens: Vec<&str> = visit.codes.iter().map(|&c| cohort.vocabulary.token(c)).collect();
        println!("  visit {i}: {tokens:?}");
    }
    Ok(())
}
