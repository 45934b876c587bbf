use funsens::formula::{parse_formula, Formula, Term};
use proptest::prelude::*;

const VARS: [&str; 5] = ["a", "b", "X1", "x_2", "Yd"];

fn var() -> impl Strategy<Value = String> {
    prop::sample::select(VARS.to_vec()).prop_map(str::to_string)
}

fn factor() -> impl Strategy<Value = Term> {
    prop_oneof![var().prop_map(Term::Linear), (var(), 2u32..5).prop_map(|(v, p)| Term::Power(v, p))]
}

fn term() -> impl Strategy<Value = Term> {
    prop_oneof![
        factor(),
        prop::collection::vec(factor(), 2..4).prop_map(Term::Interaction),
        (var(), prop::option::of(4usize..12)).prop_map(|(var, k)| Term::Smooth { var, k }),
        (var(), var(), prop::option::of(3usize..6)).prop_map(|(a, b, k)| Term::TensorSmooth { a, b, k }),
    ]
}

proptest! {
    #[test]
    fn printed_formula_parses_back(
        response in prop::option::of(var()),
        intercept in any::<bool>(),
        terms in prop::collection::vec(term(), 0..5),
    ) {
        let Ok(f) = Formula::new(response, intercept, terms) else { return Ok(()) };
        let text = f.to_string();
        let g = parse_formula(&text).unwrap();
        prop_assert_eq!(&g, &f);
        prop_assert_eq!(g.to_string(), text);
    }

    #[test]
    fn spans_cover_the_printed_terms(terms in prop::collection::vec(term(), 1..5)) {
        let Ok(f) = Formula::new(Some("y".into()), true, terms) else { return Ok(()) };
        let text = f.to_string();
        let g = parse_formula(&text).unwrap();
        for (i, t) in g.terms.iter().enumerate() {
            let span = g.span(i).unwrap();
            prop_assert_eq!(&text[span], t.to_string());
        }
    }

    #[test]
    fn error_offsets_stay_inside_the_input(text in "[ab~+:()^*,=k0-9sIte -]{0,24}") {
        if let Err(e) = parse_formula(&text) {
            prop_assert!(e.offset <= text.len());
            prop_assert!(!e.message.is_empty());
        }
    }

    #[test]
    fn whitespace_is_insignificant(terms in prop::collection::vec(term(), 1..4)) {
        let Ok(f) = Formula::new(Some("y".into()), true, terms) else { return Ok(()) };
        let spaced = f.to_string().replace(' ', "   ").replace('~', " ~ ");
        let tight: String = f.to_string().chars().filter(|c| *c != ' ').collect();
        prop_assert_eq!(parse_formula(&spaced).unwrap(), f.clone());
        prop_assert_eq!(parse_formula(&tight).unwrap(), f);
    }
}

#[test]
fn intercept_spellings_agree() {
    let base = parse_formula("y ~ a - 1").unwrap();
    for t in ["y ~ a + -1", "y ~ a + 0", "y ~ -1 + a"] {
        assert_eq!(parse_formula(t).unwrap(), base, "{t}");
    }
    assert_eq!(parse_formula("~ 1").unwrap().to_string(), "~ 1");
}

#[test]
fn unbalanced_parenthesis_points_at_it() {
    assert_eq!(parse_formula("y ~ s(a").unwrap_err().offset, 5);
    assert_eq!(parse_formula("y ~ a)").unwrap_err().offset, 5);
}
