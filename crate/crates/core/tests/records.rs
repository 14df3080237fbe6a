use std::collections::BTreeMap;

use chrono::{NaiveDate, NaiveDateTime};
use mmc_core::model::{fingerprint, read_stream, write_stream};
use mmc_core::ExamRecord;
use proptest::prelude::*;

fn record() -> impl Strategy<Value = ExamRecord> {
    (
        "[a-z0-9~-]{1,12}",
        0i64..400 * 86_400,
        prop::option::of("[A-Z_]{1,6}"),
        prop::option::of(-1e6f64..1e6),
        prop::collection::vec(-50.0f64..50.0, 1..5),
        prop::collection::vec(0.0f64..=1.0, 1..4),
        prop::option::of(prop::collection::vec(prop::option::of(any::<bool>()), 1..4)),
    )
        .prop_map(|(id, secs, cat, cont, latent, predictions, ground_truth)| {
            let start: NaiveDateTime = NaiveDate::from_ymd_opt(2014, 1, 1).unwrap().into();
            ExamRecord {
                exam_id: id,
                timestamp: start + chrono::Duration::seconds(secs),
                categorical: BTreeMap::from([("view".to_string(), cat)]),
                continuous: BTreeMap::from([("age".to_string(), cont)]),
                latent,
                predictions,
                ground_truth,
            }
        })
}

proptest! {
    #[test]
    fn streams_round_trip_exactly(records in prop::collection::vec(record(), 0..20)) {
        let mut buf = Vec::new();
        write_stream(&mut buf, &records).unwrap();
        let back = read_stream(&buf[..]).unwrap();
        prop_assert_eq!(&back, &records);
        if !records.is_empty() {
            prop_assert_eq!(fingerprint(&back).unwrap(), fingerprint(&records).unwrap());
        }
    }
}
