//! The 48 question templates and the per-type metonym phrases.
//!
//! `ENTITY` marks where a metonym of the requested type is inserted and each
//! `LOCATION` is replaced by the name of a distinct entity from the same city.
//! Slot signs are listed in textual order.

use serde::{Deserialize, Serialize};

use crate::geo::PoiType;

/// How a location mention constrains the answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintSign {
    Near,
    Far,
    Distractor,
}

impl ConstraintSign {
    /// Multiplier applied to the candidate's distance from this mention.
    pub fn weight(self) -> f64 {
        match self {
            ConstraintSign::Near => -1.0,
            ConstraintSign::Far => 1.0,
            ConstraintSign::Distractor => 0.0,
        }
    }

    fn from_code(c: char) -> Self {
        match c {
            'N' => ConstraintSign::Near,
            'F' => ConstraintSign::Far,
            'D' => ConstraintSign::Distractor,
            _ => unreachable!("bad sign code {c}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TemplateCategory {
    CloseSet,
    FarSet,
    Combination,
}

impl TemplateCategory {
    pub const ALL: [TemplateCategory; 3] = [
        TemplateCategory::CloseSet,
        TemplateCategory::FarSet,
        TemplateCategory::Combination,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateCategory::CloseSet => "close",
            TemplateCategory::FarSet => "far",
            TemplateCategory::Combination => "combination",
        }
    }

    /// Template ids belonging to this category.
    pub fn template_ids(self) -> std::ops::RangeInclusive<u32> {
        match self {
            TemplateCategory::CloseSet => 1..=16,
            TemplateCategory::FarSet => 17..=32,
            TemplateCategory::Combination => 33..=48,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSpec {
    pub id: u32,
    pub category: TemplateCategory,
    pub text: &'static str,
    pub slot_signs: Vec<ConstraintSign>,
    pub has_distractor: bool,
}

impl TemplateSpec {
    pub fn n_slots(&self) -> usize {
        self.slot_signs.len()
    }
}

pub const ENTITY_SLOT: &str = "ENTITY";
pub const LOCATION_SLOT: &str = "LOCATION";

const TEMPLATES: [(&str, &str); 48] = [
    ("N", "Do you have any recommendations of ENTITY near the LOCATION?"),
    ("N", "Does anyone have ideas on ENTITY close to LOCATION? Thank you!"),
    ("N", "Hello! Could anyone please suggest ENTITY in the neighborhood of LOCATION?"),
    ("N", "Good Morning! Can someone please propose ENTITY not very far from LOCATION?"),
    ("NN", "Suggestions for ENTITY close to both LOCATION and LOCATION?"),
    ("NN", "Some good ideas of ENTITY between LOCATION and LOCATION? Thanks much!"),
    ("NN", "Please advise ENTITY close to LOCATION and not very far off the LOCATION."),
    ("NN", "Any ideas for ENTITY near LOCATION and also close to LOCATION would be welcomed?"),
    ("DN", "I once lived around LOCATION. Does anyone have ideas of ENTITY close to the LOCATION? Thanks!"),
    ("ND", "Any nice suggestions of ENTITY near the LOCATION? I will be going to LOCATION the next day."),
    ("DN", "I just came from LOCATION. Someone, please recommend ENTITY in the neighborhood of LOCATION."),
    ("ND", "Could anyone propose ENTITY not far from the LOCATION? I need to leave for LOCATION urgently."),
    ("DNN", "We came from LOCATION this morning. Suggestions for ENTITY close to both LOCATION and LOCATION?"),
    ("NND", "Any ideas of ENTITY between LOCATION and LOCATION? I would be going to LOCATION. Thanks."),
    ("DNN", "We might be staying around LOCATION. Please advise ENTITY close to LOCATION and not far from LOCATION."),
    ("NND", "Could anyone suggest ideas for ENTITY close to LOCATION and around LOCATION? We could be going to LOCATION soon."),
    ("F", "Any suggestions for ENTITY quite far from the LOCATION? Thank you very much!"),
    ("F", "Somebody please suggest ENTITY cut off from LOCATION. Have a good day!"),
    ("F", "Does anyone have suggestions for ENTITY away from LOCATION? Thanks a lot!"),
    ("F", "Good Afternoon! Any proposals for ENTITY not very close to the LOCATION?"),
    ("FF", "Suggestions on ENTITY far from both LOCATION and LOCATION? Thank!"),
    ("FF", "Hi! Any idea of ENTITY far away from LOCATION and LOCATION?"),
    ("FF", "Could anyone please propose ENTITY not close to LOCATION and also far from LOCATION?"),
    ("FF", "Does anyone have any suggestions for ENTITY far from LOCATION and not around LOCATION?"),
    ("DF", "Hey! I will be staying at LOCATION. Please suggest ENTITY cut off from LOCATION."),
    ("FD", "Any pleasant ideas of ENTITY far off the LOCATION? I might then be visiting LOCATION."),
    ("DF", "I came from LOCATION this afternoon. Any proposal for ENTITY not close to the LOCATION?"),
    ("FD", "Does anyone have a suggestion for ENTITY distant from LOCATION? By the way, I came from LOCATION yesterday."),
    ("DFF", "We will be staying near the LOCATION. Suggestions for ENTITY far from both LOCATION and LOCATION will be welcomed."),
    ("FFD", "Any idea of ENTITY far away from LOCATION and LOCATION? I would then be visiting LOCATION."),
    ("DFF", "Hi, I will be staying near the LOCATION. Could anyone propose ENTITY not very close to LOCATION and far from LOCATION?"),
    ("FFD", "Does anyone have suggestions for ENTITY far from LOCATION and also far from LOCATION? I will then be visiting LOCATION too."),
    ("FN", "Any good ideas of ENTITY far from LOCATION but close to LOCATION would be appreciated? Best Regards."),
    ("NF", "Anyone having ideas of ENTITY close to LOCATION but far from LOCATION?"),
    ("FN", "Someone please advise ENTITY far from LOCATION but not very far from LOCATION."),
    ("NF", "Suggest ENTITY close to LOCATION but not in the neighborhood of LOCATION. Thank you so much!"),
    ("FN", "Does anyone have good ideas of ENTITY far from LOCATION but near LOCATION? Regards."),
    ("NF", "Please suggest ideas of ENTITY in the neighborhood of LOCATION but far from LOCATION."),
    ("FN", "Could anyone advise ENTITY far from LOCATION but not too far from LOCATION?"),
    ("NF", "Any nice ideas of ENTITY close to LOCATION but not in the neighborhood of LOCATION. Thanks!"),
    ("DNF", "Tomorrow, I would be coming to stay at LOCATION. Anyone having ideas of ENTITY close to LOCATION but far from LOCATION?"),
    ("FND", "Please propose ENTITY far from LOCATION but not far from LOCATION. I will then be exploring LOCATION."),
    ("DFN", "I came from LOCATION this evening. Any nice ideas for ENTITY far from LOCATION but close to LOCATION would be appreciated?"),
    ("NFD", "Suggest ENTITY close to LOCATION but not near LOCATION. Tomorrow, I will be leaving for LOCATION."),
    ("DNF", "Yesterday, I came to stay at LOCATION. Any ideas of ENTITY close to LOCATION but far from LOCATION?"),
    ("FND", "Suggestions of ENTITY far from LOCATION but not very far from LOCATION. I will then be moving to LOCATION."),
    ("DFN", "I came from LOCATION today. Any good ideas for ENTITY far from LOCATION but near to LOCATION would be welcomed?"),
    ("NFD", "Advise ENTITY close to LOCATION but not close to LOCATION. I might be leaving for LOCATION soon."),
];

/// All 48 templates in id order.
pub fn template_bank() -> Vec<TemplateSpec> {
    TEMPLATES
        .iter()
        .enumerate()
        .map(|(i, &(codes, text))| {
            let id = i as u32 + 1;
            let category = match id {
                1..=16 => TemplateCategory::CloseSet,
                17..=32 => TemplateCategory::FarSet,
                _ => TemplateCategory::Combination,
            };
            let slot_signs: Vec<ConstraintSign> = codes.chars().map(ConstraintSign::from_code).collect();
            let has_distractor = slot_signs.contains(&ConstraintSign::Distractor);
            TemplateSpec {
                id,
                category,
                text,
                slot_signs,
                has_distractor,
            }
        })
        .collect()
}

pub fn template(id: u32) -> Option<TemplateSpec> {
    template_bank().into_iter().find(|t| t.id == id)
}

const RESTAURANT_METONYMS: [&str; 16] = [
    "a restaurant", "an eatery", "an eating joint", "a cafeteria", "an outlet", "a coffee shop",
    "a fast food place", "a lunch counter", "a lunch room", "a snack bar", "a chop house",
    "a steak house", "a pizzeria", "a coffee shop", "a tea house", "a bar room",
];

const HOTEL_METONYMS: [&str; 17] = [
    "a hotel", "an inn", "a motel", "a guest house", "a hostel", "a boarding house", "a lodge",
    "an auberge", "a caravansary", "a public house", "a tavern", "an accomodation", "a resort",
    "a youth hostel", "a bunk house", "a dormitory", "a flop house",
];

const ATTRACTION_METONYMS: [&str; 11] = [
    "an attraction", "a tourist spot", "a tourist attraction", "a popular wonder",
    "a sightseeing place", "a tourist location", "a place of tourist interest", "a crowd pleaser",
    "a scenic spot", "a popular landmark", "a monument",
];

pub fn metonyms(poi_type: PoiType) -> &'static [&'static str] {
    match poi_type {
        PoiType::R => &RESTAURANT_METONYMS,
        PoiType::H => &HOTEL_METONYMS,
        PoiType::A => &ATTRACTION_METONYMS,
    }
}

/// A uniformly chosen metonym phrase for `poi_type`.
pub fn metonym(poi_type: PoiType, rng: &mut impl rand::Rng) -> &'static str {
    let list = metonyms(poi_type);
    list[rng.random_range(0..list.len())]
}
