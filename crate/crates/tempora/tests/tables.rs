use proptest::prelude::*;
use tempora::report::{parse_markdown_table, Cell, Table};

fn cell_text() -> impl Strategy<Value = String> {
    // Emphasis markers are stripped on parse, so keep them out.
    "[a-zA-Z0-9 .,%|+()-]{0,12}".prop_map(|s| s.trim().to_string())
}

proptest! {
    #[test]
    fn markdown_and_csv_carry_the_same_cells(
        headers in prop::collection::vec("[a-z]{1,8}", 1..5),
        seed in prop::collection::vec(cell_text(), 0..40),
    ) {
        let width = headers.len();
        let mut t = Table::new(headers.clone());
        for chunk in seed.chunks(width).filter(|c| c.len() == width) {
            t.push(chunk.iter().map(|s| Cell::plain(s.as_str())).collect());
        }
        let (h, rows) = parse_markdown_table(&t.to_markdown());
        prop_assert_eq!(&h, &headers);
        let want: Vec<Vec<String>> = t.rows.iter().map(|r| r.iter().map(|c| c.text.clone()).collect()).collect();
        prop_assert_eq!(&rows, &want);

        let csv_text = t.to_csv();
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(csv_text.as_bytes());
        let csv_headers: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
        prop_assert_eq!(&csv_headers, &headers);
        let csv_rows: Vec<Vec<String>> = reader.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
        prop_assert_eq!(&csv_rows, &want);
    }
}
