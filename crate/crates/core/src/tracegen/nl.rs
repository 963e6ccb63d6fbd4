//! Scripted natural-language operands. Each entry pairs a word problem with
//! a fixed value; lookup ignores case and runs of whitespace. The bank
//! withdrawal problem keeps the value its benchmark row records rather than
//! one re-derived from the wording.

use super::expr::Exact;

pub const SNIPPETS: &[(&str, &str)] = &[
    ("Average of 3, 7, and five?", "5"),
    ("Multiply the sum of three, seven, and five by two. Then, subtract fifteen.", "15"),
    ("If you subtract 3 from 43 and then divide by 5, what is the result?", "8"),
    ("Five added to twice the difference between twenty and the sum of seven and three.", "25"),
    (
        "Thomas withdraws $10000 in 20 dollar bills from the bank account.  He loses 100 bills while getting home.  After that, he uses half of the remaining bills to pay for a bill.  Thomas then triples his money.  He then converts all his bills to 10 dollar bills.  How many 5 dollar bills does he have?",
        "1200",
    ),
    (
        "To participate in the local community tree-planting campaign, Mr. Julius planted twenty White Oak trees and twice as many Lodgepole Pine trees on the first day. On the second day, he planted additional White Oak trees and 1/4 more Lodgepole Pine trees than on the first day. If the total number of trees planted over both days is 140, how many more White Oak trees did Mr. Julius plant on the second day?",
        "30",
    ),
    ("Half of twenty-four", "12"),
    ("The product of four and nine", "36"),
    ("Seven more than the square of three", "16"),
    ("One third of the sum of ten and eight", "6"),
    ("The difference between fifty and thirty-five", "15"),
    ("Twice the sum of six and one", "14"),
    ("Two and a half", "2.5"),
    ("A quarter of ten", "2.5"),
    ("Three dozen eggs, minus the eleven that broke", "25"),
    ("The number of days in two weeks", "14"),
    ("Nine divided by the difference of seven and four", "3"),
    ("Ten percent of ninety", "9"),
    ("Subtract eight from the product of three and six", "10"),
];

fn normalize(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

pub fn lookup(text: &str) -> Option<Exact> {
    let key = normalize(text);
    SNIPPETS
        .iter()
        .find(|(t, _)| normalize(t) == key)
        .map(|(_, v)| v.parse().expect("snippet table values are decimals"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_is_loose_on_case_and_spacing() {
        assert_eq!(lookup("average  of 3, 7, and FIVE?"), Some(Exact::from_int(5)));
        assert_eq!(lookup("Average of 3, 7, and six?"), None);
    }

    #[test]
    fn table_values_parse_and_keys_are_unique() {
        let mut seen = std::collections::HashSet::new();
        for (t, _) in SNIPPETS {
            assert!(lookup(t).is_some());
            assert!(seen.insert(normalize(t)), "{t}");
            assert!(!t.contains('}') && t.starts_with(char::is_alphabetic));
        }
    }
}
