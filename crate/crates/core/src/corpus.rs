//! Bundled mini-corpus: ten tool documents, twenty queries, and fully
//! scripted agent/judge backends that drive the whole pipeline offline.
//!
//! The scripts encode a known outcome: 20 assessed queries of which 12 are
//! retained (Solvable with score >= 8), 9 forged episodes admitted and 3
//! rejected (one giving up, one with a consecutive duplicate call, one judged
//! redundant), 8 reflection instances covering every error kind, and a
//! 10/10/5 error-case benchmark.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::json;

use crate::gateway::{PromptId, ScriptEntry};
use crate::model::{Group, Query};
use crate::store::{write_atomic, PipelineConfig, StoreError};

/// Raw tool documents, in file order.
pub fn mini_apis() -> Vec<serde_json::Value> {
    vec![
        json!({
            "name": "get_weather_forecast",
            "description": "This is the subfunction for tool weather_data, you can use this tool.",
            "parameters": {
                "city": {"type": "string", "description": ""},
                "date": {"type": "string", "description": ""}
            },
            "required": ["city", "date"],
            "origin": "simulated"
        }),
        json!({
            "name": "ticket_info_query",
            "description": "Query transport ticket information between cities.",
            "parameters": {
                "departure": {"type": "string", "description": "Departure city."},
                "destination": {"type": "string", "description": "Destination city."},
                "travel_mode": {"type": "string", "description": "Train, Plane, or Bus."}
            },
            "required": ["destination", "travel_mode"],
            "origin": "simulated"
        }),
        json!({
            "name": "get_list_of_languages_for_businessmate",
            "description": "Get supported languages with codes.",
            "parameters": {},
            "required": [],
            "origin": "live"
        }),
        json!({
            "name": "all_airplanes_for_airplanesdb",
            "description": "Get all airplanes data.",
            "parameters": {},
            "required": [],
            "origin": "live"
        }),
        json!({
            "name": "single_airplane_for_airplanesdb",
            "description": "Get specific airplane details by ID.",
            "parameters": {
                "is_id": {"type": "integer", "description": ""}
            },
            "required": ["is_id"],
            "origin": "live"
        }),
        json!({
            "name": "cars_for_car_data",
            "description": "This is the subfunction for tool car_data, you can use this tool. The description of this function is: Retrieve and filter lists of cars",
            "parameters": {
                "page": {"type": "integer", "description": ""},
                "limit": {"type": "integer", "description": ""},
                "make": {"type": "string", "description": ""},
                "year": {"type": "integer", "description": ""},
                "model": {"type": "string", "description": ""},
                "type": {"type": "string", "description": ""}
            },
            "required": ["page", "limit"],
            "origin": "simulated"
        }),
        json!({
            "name": "get_user_orders_for_onboarding_project_v3",
            "description": "Get user's order history.",
            "parameters": {
                "user_id": {"type": "string", "description": ""}
            },
            "required": ["user_id"],
            "origin": "simulated"
        }),
        json!({
            "name": "get_order_for_onboarding_project_v3",
            "description": "Get detailed information for a specific order.",
            "parameters": {
                "order_id": {"type": "integer", "description": ""}
            },
            "required": ["order_id"],
            "origin": "simulated"
        }),
        json!({
            "name": "flight_data_lookup",
            "description": "Fetch flight data for an airline company on a date.",
            "parameters": {
                "company": {"type": "string", "description": "Airline code."},
                "date": {"type": "string", "description": "Date in YYYY-MM-DD."}
            },
            "required": ["company", "date"],
            "origin": "live"
        }),
        json!({
            "name": "search_roman_god_by_name",
            "description": "Search god by name for details and Greek equivalents.",
            "parameters": {
                "god": {"type": "string", "description": ""}
            },
            "required": ["god"],
            "origin": "simulated"
        }),
    ]
}

/// The twenty bundled queries, in file order.
pub fn mini_queries() -> Vec<Query> {
    let q = |id: &str, text: &str, group: Group, tools: &[&str]| {
        Query::new(id, text, group, tools.iter().map(|t| t.to_string()).collect()).unwrap()
    };
    vec![
        q(
            "q01",
            "What's the weather in London on December 25, 2024?",
            Group::G1,
            &["get_weather_forecast"],
        ),
        q(
            "q02",
            "I need a train ticket to Beijing. What are my options?",
            Group::G1,
            &["ticket_info_query"],
        ),
        q(
            "q03",
            "I'm organizing a language learning event. Can you provide me with a comprehensive list of languages?",
            Group::G1,
            &["get_list_of_languages_for_businessmate"],
        ),
        q(
            "q04",
            "I would like to know the details of the airplane with id 1 for a presentation on aviation history.",
            Group::G1,
            &["all_airplanes_for_airplanesdb", "single_airplane_for_airplanesdb"],
        ),
        q(
            "q05",
            "Show me the first five car records from the car database.",
            Group::G1,
            &["cars_for_car_data"],
        ),
        q(
            "q06",
            "I'm interested in Roman mythology. Could you provide detailed information about that god?",
            Group::G1,
            &["search_roman_god_by_name"],
        ),
        q(
            "q07",
            "Can you fetch the flight data for the company AZU on June 15th, 2022?",
            Group::G1,
            &["flight_data_lookup"],
        ),
        q(
            "q08",
            "What's the weather going to be like tomorrow?",
            Group::G1,
            &["get_weather_forecast"],
        ),
        q(
            "q09",
            "I'm organizing a language learning event and I need a list of languages to include in the program. Additionally, I would like to know the details of a specific airplane for a presentation on aviation history.",
            Group::G2,
            &[
                "get_list_of_languages_for_businessmate",
                "all_airplanes_for_airplanesdb",
                "single_airplane_for_airplanesdb",
            ],
        ),
        q(
            "q10",
            "Can you fetch the details of my recent orders for user u100? I would like to know the products I ordered and the order status of order 1234.",
            Group::G2,
            &[
                "get_user_orders_for_onboarding_project_v3",
                "get_order_for_onboarding_project_v3",
            ],
        ),
        q(
            "q11",
            "I'm traveling to Beijing on May 1st, 2025. What will the weather be like, and can you find me a train ticket?",
            Group::G2,
            &["get_weather_forecast", "ticket_info_query"],
        ),
        q(
            "q12",
            "List three cars from the first page of the car database, and fetch the flight data for company AZ on June 15th, 2022.",
            Group::G2,
            &["cars_for_car_data", "flight_data_lookup"],
        ),
        q(
            "q13",
            "I need to keep track of the transaction volume on the BSC testnet and receive webhook notifications for new transactions.",
            Group::G2,
            &[
                "get_user_orders_for_onboarding_project_v3",
                "get_order_for_onboarding_project_v3",
            ],
        ),
        q(
            "q14",
            "Tell me about the Roman god Mars, and also list the languages your system supports.",
            Group::G2,
            &["search_roman_god_by_name", "get_list_of_languages_for_businessmate"],
        ),
        q(
            "q15",
            "Book me a hotel room in Shanghai for next weekend.",
            Group::G2,
            &["ticket_info_query"],
        ),
        q(
            "q16",
            "I'm planning a trip to Paris on November 2nd, 2024. What's the weather forecast, which airplane has id 2, and what languages could I study beforehand?",
            Group::G3,
            &[
                "get_weather_forecast",
                "single_airplane_for_airplanesdb",
                "get_list_of_languages_for_businessmate",
            ],
        ),
        q(
            "q17",
            "Give me details about the Roman god Neptune and the flight data for company AA on July 4th, 2023.",
            Group::G3,
            &["search_roman_god_by_name", "flight_data_lookup"],
        ),
        q(
            "q18",
            "Compare the cars on page 1 of the database with the weather in Tokyo on January 1st, 2025.",
            Group::G3,
            &["cars_for_car_data", "get_weather_forecast"],
        ),
        q(
            "q19",
            "Book a train ticket to Beijing for yesterday and tell me tomorrow's weather there last week.",
            Group::G3,
            &["ticket_info_query", "get_weather_forecast"],
        ),
        q(
            "q20",
            "Maybe check some orders or airplanes or whatever looks interesting.",
            Group::G3,
            &[
                "get_user_orders_for_onboarding_project_v3",
                "single_airplane_for_airplanesdb",
            ],
        ),
    ]
}

fn exec_turn(thought: &str, call: &str) -> String {
    format!("<thought>{thought}</thought>\n<execute>\nprint({call})\n</execute>")
}

fn final_turn(thought: &str, answer: &str) -> String {
    format!("<thought>{thought}</thought>\n<final_answer>{answer}</final_answer>")
}

fn given_up_turn(thought: &str) -> String {
    format!("<thought>{thought}</thought>\n<given_up></given_up>")
}

fn query_verdict(content: &str, decision: &str, score: u8) -> String {
    json!({"content": content, "decision": decision, "quality_score": score}).to_string()
}

fn answer_verdict(content: &str, status: &str, validity: &str) -> String {
    json!({"content": content, "answer_status": status, "all_steps_validity": validity})
        .to_string()
}

fn reflection_text(analysis: &str, call: &str) -> String {
    format!(
        "# Reflection\n<thought>{analysis}</thought>\n<execute>\n# correct api call\nprint({call})\n</execute>"
    )
}

fn case_pair(wrong: &str, correct: &str) -> String {
    json!({"wrong_call": wrong, "correct_call": correct}).to_string()
}

fn probe_agent_script() -> Vec<ScriptEntry> {
    let eg = |code: &str| ScriptEntry::for_template(PromptId::ExampleGen, code.to_string());
    let rd = |body: &str| ScriptEntry::for_template(PromptId::RefineDoc, body.to_string());
    vec![
        eg("print(\"Example 1:\")\nprint(get_weather_forecast(city=\"London\", date=\"2024-12-25\"))\n\nprint(\"Example 2:\")\nprint(get_weather_forecast(city=\"Paris\", date=\"2024-11-02\"))"),
        eg("print(\"Example 1:\")\nprint(ticket_info_query(destination=\"Beijing\", travel_mode=\"Train\"))\n\nprint(\"Example 2:\")\nprint(ticket_info_query(departure=\"Shanghai\", destination=\"Beijing\", travel_mode=\"Plane\"))\n\nprint(\"Example 3:\")\nprint(ticket_info_query(departure=\"Guangzhou\", destination=\"Shenzhen\", travel_mode=\"Bus\"))"),
        eg("print(\"Example 1:\")\nprint(get_list_of_languages_for_businessmate())"),
        eg("print(\"Example 1:\")\nprint(all_airplanes_for_airplanesdb())"),
        eg("print(\"Example 1:\")\nprint(single_airplane_for_airplanesdb(is_id=1))\n\nprint(\"Example 2:\")\nprint(single_airplane_for_airplanesdb(is_id=2))"),
        eg("print(\"Example 1:\")\nprint(cars_for_car_data(page=0, limit=5))\n\nprint(\"Example 2:\")\nprint(cars_for_car_data(page=1, limit=5, make=\"Toyota\"))"),
        eg("print(\"Example 1:\")\nprint(get_user_orders_for_onboarding_project_v3())"),
        eg("print(\"Example 1:\")\nprint(get_order_for_onboarding_project_v3(is_id=1))"),
        eg("print(\"Example 1:\")\nprint(flight_data_lookup(company=\"AZU\", date=\"2022-06-15\"))"),
        eg("print(\"Example 1:\")\nprint(search_roman_god_by_name(god=\"Mars\"))"),
        rd(&json!({
            "is_api_valid": true,
            "refine_api": {"type": "function", "function": {
                "name": "get_weather_forecast",
                "description": "Retrieve the weather forecast for a specific city on a specific date.",
                "parameters": {"properties": {
                    "city": {"type": "string", "description": "The city to forecast, e.g. London."},
                    "date": {"type": "string", "description": "The forecast date in YYYY-MM-DD format."}
                }, "required": ["city", "date"]}}}
        }).to_string()),
        rd("{\"is_api_valid\": true}"),
        rd("{\"is_api_valid\": true}"),
        rd("{\"is_api_valid\": true}"),
        rd(&json!({
            "is_api_valid": true,
            "refine_api": {"type": "function", "function": {
                "name": "single_airplane_for_airplanesdb",
                "description": "Get details for one airplane by its numeric id.",
                "parameters": {"properties": {
                    "is_id": {"type": "integer", "description": "The numeric airplane id. Starts from 1."}
                }, "required": ["is_id"]}}}
        }).to_string()),
        rd(&json!({
            "is_api_valid": true,
            "refine_api": {"type": "function", "function": {
                "name": "cars_for_car_data",
                "description": "Retrieve and filter lists of cars based on parameters such as page, limit, make, year, model, and type. Use this function to fetch paginated car data, ensuring correct parameter configuration to avoid empty responses.",
                "parameters": {"properties": {
                    "page": {"type": "integer", "description": "The page number for pagination. Starts from 0."},
                    "limit": {"type": "integer", "description": "The maximum number of car records to retrieve per page."},
                    "make": {"type": "string", "description": "The manufacturer or brand of the car (e.g., Toyota, Tesla)."},
                    "year": {"type": "integer", "description": "The manufacturing year of the car."},
                    "model": {"type": "string", "description": "The specific model of the car (e.g., Corolla, Escape)."},
                    "type": {"type": "string", "description": "The type or body style of the car (e.g., Sedan, SUV, Electric)."}
                }, "required": ["page", "limit"]}}}
        }).to_string()),
        rd("{\"is_api_valid\": false}"),
        rd("{\"is_api_valid\": false}"),
        rd("{\"is_api_valid\": true}"),
        rd(&json!({
            "is_api_valid": true,
            "refine_api": {"type": "function", "function": {
                "name": "search_roman_god_by_name",
                "description": "Search a Roman god by name and return details including Greek equivalents.",
                "parameters": {"properties": {
                    "god": {"type": "string", "description": "The Roman god's name, e.g. Mars."}
                }, "required": ["god"]}}}
        }).to_string()),
    ]
}

fn verify_judge_script() -> Vec<ScriptEntry> {
    let qv = |content: &str, decision: &str, score: u8| {
        ScriptEntry::for_template(PromptId::QueryVerify, query_verdict(content, decision, score))
    };
    vec![
        qv("City and date are fully specified.", "Solvable", 9),
        qv("Destination and travel mode are clear.", "Solvable", 8),
        qv("A plain listing request the language API covers.", "Solvable", 9),
        qv("The airplane id is given explicitly.", "Solvable", 8),
        qv("Page and limit are implied clearly.", "Solvable", 8),
        qv("No god name is given, so the lookup cannot be made.", "Unsolvable", 4),
        qv("Solvable but only moderately specific.", "Solvable", 7),
        qv("No city is specified and the date is relative.", "Unsolvable", 3),
        qv("Both requests map directly to the available APIs.", "Solvable", 9),
        qv("User id and order id are both present.", "Solvable", 9),
        qv("City, date, and ticket needs are all stated.", "Solvable", 8),
        qv("Both sub-requests are fully parameterized.", "Solvable", 8),
        qv("The webhook request lacks required transaction IDs.", "Unsolvable", 5),
        qv("God name and listing request are both clear.", "Solvable", 8),
        qv("No hotel booking tool is available.", "Unsolvable", 2),
        qv("All three sub-requests are fully specified.", "Solvable", 9),
        qv("God name, company, and date are all given.", "Solvable", 8),
        qv("Solvable, though the comparison framing is vague.", "Solvable", 7),
        qv("The dates contradict each other.", "Unsolvable", 4),
        qv("Aimless request without concrete parameters.", "Solvable", 6),
    ]
}

#[allow(clippy::vec_init_then_push)]
fn forge_agent_script() -> Vec<ScriptEntry> {
    let tc = |turn: String| ScriptEntry::for_template(PromptId::TrajectoryConstruct, turn);
    let mut entries = Vec::with_capacity(33);
    // q01
    entries.push(tc(exec_turn(
        "The query names London and 2024-12-25, so I can call the forecast API directly.",
        "get_weather_forecast(city=\"London\", date=\"2024-12-25\")",
    )));
    entries.push(tc(final_turn(
        "The forecast came back successfully, so I can answer.",
        "The weather in London on 2024-12-25 will be cold with light snow.",
    )));
    // q02
    entries.push(tc(exec_turn(
        "I need train tickets to Beijing; destination and travel mode are known.",
        "ticket_info_query(destination=\"Beijing\", travel_mode=\"Train\")",
    )));
    entries.push(tc(final_turn(
        "Ticket data retrieved; I can summarize the options.",
        "Train tickets to Beijing are available; see the retrieved fares and schedules.",
    )));
    // q03
    entries.push(tc(exec_turn(
        "A single call to the language list API covers this request.",
        "get_list_of_languages_for_businessmate()",
    )));
    entries.push(tc(final_turn(
        "The language list was returned.",
        "The supported languages for your event include the full retrieved list.",
    )));
    // q04
    entries.push(tc(exec_turn(
        "I will first list all airplanes to confirm id 1 exists.",
        "all_airplanes_for_airplanesdb()",
    )));
    entries.push(tc(exec_turn(
        "Id 1 is present, so I fetch its details next.",
        "single_airplane_for_airplanesdb(is_id=1)",
    )));
    entries.push(tc(final_turn(
        "I have the airplane details for the presentation.",
        "Airplane id 1 is the Boeing 737-800; details retrieved for your presentation.",
    )));
    // q05
    entries.push(tc(exec_turn(
        "Fetching the first page with a limit of five records.",
        "cars_for_car_data(page=0, limit=5)",
    )));
    entries.push(tc(final_turn(
        "Five car records retrieved.",
        "Here are the first five car records from the database.",
    )));
    // q09
    entries.push(tc(exec_turn(
        "First retrieve the language list for the event program.",
        "get_list_of_languages_for_businessmate()",
    )));
    entries.push(tc(exec_turn(
        "Now fetch the airplane list to identify a valid id.",
        "all_airplanes_for_airplanesdb()",
    )));
    entries.push(tc(exec_turn(
        "Id 1 looks suitable; fetch its details.",
        "single_airplane_for_airplanesdb(is_id=1)",
    )));
    entries.push(tc(final_turn(
        "Both the language list and the airplane details are ready.",
        "Languages retrieved for the event, and airplane id 1 is detailed for the aviation presentation.",
    )));
    // q10
    entries.push(tc(exec_turn(
        "Fetch the order history for user u100 first.",
        "get_user_orders_for_onboarding_project_v3(user_id=\"u100\")",
    )));
    entries.push(tc(exec_turn(
        "Now retrieve the detail of order 1234.",
        "get_order_for_onboarding_project_v3(order_id=1234)",
    )));
    entries.push(tc(final_turn(
        "Order history and the order detail are both available.",
        "Your order 1234 is on record with its products and current status retrieved.",
    )));
    // q11
    entries.push(tc(exec_turn(
        "Check the Beijing weather for 2025-05-01 first.",
        "get_weather_forecast(city=\"Beijing\", date=\"2025-05-01\")",
    )));
    entries.push(tc(exec_turn(
        "Now look up train tickets to Beijing.",
        "ticket_info_query(destination=\"Beijing\", travel_mode=\"Train\")",
    )));
    entries.push(tc(final_turn(
        "Weather and ticket information are both in hand.",
        "The Beijing forecast for 2025-05-01 and available train tickets are summarized above.",
    )));
    // q12: repeats the car listing, which the judge will flag.
    entries.push(tc(exec_turn(
        "Get three cars from page 0.",
        "cars_for_car_data(page=0, limit=3)",
    )));
    entries.push(tc(exec_turn(
        "Fetch the flight data for AZ on 2022-06-15.",
        "flight_data_lookup(company=\"AZ\", date=\"2022-06-15\")",
    )));
    entries.push(tc(exec_turn(
        "Re-fetch the car list to be safe.",
        "cars_for_car_data(page=0, limit=3)",
    )));
    entries.push(tc(final_turn(
        "Both datasets were retrieved.",
        "Three cars from page 0 and the AZ flight data for 2022-06-15 are listed above.",
    )));
    // q14: consecutive duplicate call, filtered mechanically.
    entries.push(tc(exec_turn(
        "Look up the god Mars.",
        "search_roman_god_by_name(god=\"Mars\")",
    )));
    entries.push(tc(exec_turn(
        "Call the same lookup again to double-check.",
        "search_roman_god_by_name(god=\"Mars\")",
    )));
    entries.push(tc(final_turn(
        "I have the god details; the language list is familiar.",
        "Mars is the Roman god of war; language list attached.",
    )));
    // q16
    entries.push(tc(exec_turn(
        "Start with the Paris forecast for 2024-11-02.",
        "get_weather_forecast(city=\"Paris\", date=\"2024-11-02\")",
    )));
    entries.push(tc(exec_turn(
        "Now fetch airplane id 2.",
        "single_airplane_for_airplanesdb(is_id=2)",
    )));
    entries.push(tc(final_turn(
        "Weather and airplane details retrieved; languages were listed earlier in my context.",
        "Paris forecast for 2024-11-02 and airplane id 2 details are provided above.",
    )));
    // q17: gives up.
    entries.push(tc(exec_turn(
        "Look up Neptune first.",
        "search_roman_god_by_name(god=\"Neptune\")",
    )));
    entries.push(tc(given_up_turn(
        "The flight data request cannot be completed reliably; I cannot finish this task.",
    )));
    entries
}

fn forge_judge_script() -> Vec<ScriptEntry> {
    let av = |content: &str, status: &str, validity: &str| {
        ScriptEntry::for_template(PromptId::AnswerVerify, answer_verdict(content, status, validity))
    };
    vec![
        av("Valid weather data obtained and summarized.", "Pass", "yes"),
        av("Ticket data retrieved and used in the answer.", "Pass", "yes"),
        av("Language list retrieved and reported.", "Pass", "yes"),
        av("Both calls contributed to the final details.", "Pass", "yes"),
        av("Car records retrieved as requested.", "Pass", "yes"),
        av("All three calls were necessary and the answer covers both requests.", "Pass", "yes"),
        av("Order history and detail both support the answer.", "Pass", "yes"),
        av("Weather and ticket data both used.", "Pass", "yes"),
        av("The car listing was fetched twice; the repeat contributed nothing.", "Pass", "no"),
        av("Weather and airplane details both support the answer.", "Pass", "yes"),
    ]
}

fn explore_agent_script() -> Vec<ScriptEntry> {
    let tc = |turn: String| ScriptEntry::for_template(PromptId::TrajectoryConstruct, turn);
    vec![
        // q04 t0
        tc(exec_turn(
            "Fetch the airplane details directly.",
            "single_airplane_for_airplanesdb()",
        )),
        tc(exec_turn(
            "Fetch airplane id 1.",
            "single_airplane_for_airplanesdb(is_id=1)",
        )),
        // q09 t0
        tc(exec_turn(
            "Try a specific airplane immediately.",
            "single_airplane_for_airplanesdb(is_id=12345)",
        )),
        tc(exec_turn(
            "Consult the airplane catalog service.",
            "lookup_airplane_catalog()",
        )),
        // q09 t1
        tc(exec_turn(
            "Fetch the airplane by id.",
            "single_airplane_for_airplanesdb(is_id=\"one\")",
        )),
        tc(exec_turn(
            "Fetch a promising airplane id.",
            "single_airplane_for_airplanesdb(is_id=12345)",
        )),
        // q10 t0
        tc(exec_turn(
            "Retrieve the order detail.",
            "get_order_for_onboarding_project_v3(is_id=1234)",
        )),
        tc(exec_turn(
            "Retrieve the order detail by order id.",
            "get_order_for_onboarding_project_v3(order_id=1234)",
        )),
        // q11 t0
        tc(exec_turn(
            "Look for train tickets.",
            "ticket_info_query(travel_mode=\"Train\")",
        )),
        tc(exec_turn(
            "Check plane tickets to Beijing instead.",
            "ticket_info_query(destination=\"Beijing\", travel_mode=\"Plane\")",
        )),
        // q16 t0
        tc(exec_turn(
            "Re-check the Paris weather.",
            "get_weather_forecast(city=\"Paris\", date=\"2024-11-02\")",
        )),
        tc(exec_turn(
            "Fetch airplane id 2.",
            "single_airplane_for_airplanesdb(is_id=2)",
        )),
    ]
}

fn explore_judge_script() -> Vec<ScriptEntry> {
    let branch = |disposition: &str| {
        ScriptEntry::new(json!({"disposition": disposition}).to_string())
            .with_pattern("Sampled action:")
    };
    let refl = |analysis: &str, call: &str| {
        ScriptEntry::for_template(PromptId::Reflection, reflection_text(analysis, call))
    };
    vec![
        branch("wrong_parameter_content"),
        branch("success"),
        refl(
            "The call omitted the required is_id parameter, so the API rejected it. The airplane list in the previous iteration shows id 1, so I will call the detail API with is_id=1.",
            "single_airplane_for_airplanesdb(is_id=1)",
        ),
        refl(
            "Jumping to a specific airplane with a guessed id skipped the listing step the plan needs. The correct next action is to retrieve the full airplane list first.",
            "all_airplanes_for_airplanesdb()",
        ),
        refl(
            "The called API does not exist in the provided list. The available API for this step is the airplane listing endpoint.",
            "all_airplanes_for_airplanesdb()",
        ),
        refl(
            "The id was passed as a string but the parameter is an integer, causing a type mismatch. Retry with the integer id 1 from the listing.",
            "single_airplane_for_airplanesdb(is_id=1)",
        ),
        refl(
            "The guessed id 12345 returned no meaningful data; the listing shows valid ids starting at 1. Use id 1 from the earlier observation.",
            "single_airplane_for_airplanesdb(is_id=1)",
        ),
        refl(
            "The parameter name is_id is not accepted by this API; the order detail endpoint takes order_id. Retry with order_id=1234 from the order history.",
            "get_order_for_onboarding_project_v3(order_id=1234)",
        ),
        refl(
            "The required destination parameter was omitted, so the query failed. The trip is to Beijing by train, so include both parameters.",
            "ticket_info_query(destination=\"Beijing\", travel_mode=\"Train\")",
        ),
        refl(
            "Re-fetching the weather repeats a completed step instead of advancing to the airplane lookup. The plan calls for fetching airplane id 2 next.",
            "single_airplane_for_airplanesdb(is_id=2)",
        ),
    ]
}

fn eval_refine_agent_script() -> Vec<ScriptEntry> {
    let pair = |wrong: &str, correct: &str| ScriptEntry::new(case_pair(wrong, correct));
    vec![
        // I1 pairs (live-origin tools), in (query, tool) enumeration order.
        pair(
            "get_list_of_languages_for_businessmate(lang=\"fr\")",
            "get_list_of_languages_for_businessmate()",
        ),
        pair("all_airplanes_for_airplanesdb(limit=5)", "all_airplanes_for_airplanesdb()"),
        pair(
            "single_airplane_for_airplanesdb()",
            "single_airplane_for_airplanesdb(is_id=1)",
        ),
        pair(
            "get_list_of_languages_for_businessmate(page=1)",
            "get_list_of_languages_for_businessmate()",
        ),
        pair("all_airplanes_for_airplanesdb(id=1)", "all_airplanes_for_airplanesdb()"),
        pair(
            "single_airplane_for_airplanesdb(is_id=\"one\")",
            "single_airplane_for_airplanesdb(is_id=1)",
        ),
        pair(
            "flight_data_lookup(company=\"AZ\")",
            "flight_data_lookup(company=\"AZ\", date=\"2022-06-15\")",
        ),
        pair(
            "get_languages_list()",
            "get_list_of_languages_for_businessmate()",
        ),
        pair(
            "single_airplane_for_airplanesdb(id=2)",
            "single_airplane_for_airplanesdb(is_id=2)",
        ),
        pair(
            "get_list_of_languages_for_businessmate(code=\"en\")",
            "get_list_of_languages_for_businessmate()",
        ),
        // I2 pairs (simulator-served tools).
        pair(
            "get_weather_forecast(city=\"London\")",
            "get_weather_forecast(city=\"London\", date=\"2024-12-25\")",
        ),
        pair(
            "ticket_info_query(destination=\"Beijing\")",
            "ticket_info_query(destination=\"Beijing\", travel_mode=\"Train\")",
        ),
        pair("cars_for_car_data(page=0)", "cars_for_car_data(page=0, limit=5)"),
        pair(
            "get_user_orders_for_onboarding_project_v3()",
            "get_user_orders_for_onboarding_project_v3(user_id=\"u100\")",
        ),
        pair(
            "get_order_for_onboarding_project_v3(is_id=1234)",
            "get_order_for_onboarding_project_v3(order_id=1234)",
        ),
        pair(
            "get_weather_forecast(city=\"Beijing\", date=20250501)",
            "get_weather_forecast(city=\"Beijing\", date=\"2025-05-01\")",
        ),
        pair(
            "ticket_info_query(travel_mode=\"Train\")",
            "ticket_info_query(destination=\"Beijing\", travel_mode=\"Train\")",
        ),
        pair(
            "cars_for_car_data(page=\"zero\", limit=3)",
            "cars_for_car_data(page=0, limit=3)",
        ),
        pair("search_roman_god_by_name()", "search_roman_god_by_name(god=\"Mars\")"),
        pair(
            "get_weather_forecast(town=\"Paris\", date=\"2024-11-02\")",
            "get_weather_forecast(city=\"Paris\", date=\"2024-11-02\")",
        ),
    ]
}

fn eval_pass_judge_script() -> Vec<ScriptEntry> {
    let pj = |content: &str, status: &str| {
        ScriptEntry::for_template(
            PromptId::PassJudge,
            json!({"content": content, "answer_status": status}).to_string(),
        )
    };
    let mut entries = vec![pj("Answer grounded in successful calls.", "Pass"); 8];
    entries.push(pj("Response data too sparse to confirm.", "Unsure"));
    entries
}

/// All golden scripts keyed by `<stage>.<role>`.
pub fn golden_scripts() -> BTreeMap<String, Vec<ScriptEntry>> {
    BTreeMap::from([
        ("probe.agent".to_string(), probe_agent_script()),
        ("verify-queries.judge".to_string(), verify_judge_script()),
        ("forge.agent".to_string(), forge_agent_script()),
        ("forge.judge".to_string(), forge_judge_script()),
        ("explore.agent".to_string(), explore_agent_script()),
        ("explore.judge".to_string(), explore_judge_script()),
        ("eval-pass.judge".to_string(), eval_pass_judge_script()),
        ("eval-refine.agent".to_string(), eval_refine_agent_script()),
    ])
}

const FIXTURE_CONFIG: &str = r#"workdir = "."
seed = 7
quality_threshold = 8
mix_ratio = 10.0

[backends.agent]
kind = "mock"
scripts_dir = "scripts"

[backends.judge]
kind = "mock"
scripts_dir = "scripts"

[simulator]
kind = "deterministic"
seed = 7

[episode]
max_iterations = 12
temperature = 0.0

[explore]
k = 2
n = 2
temperature = 0.9
seed = 11

[refine]
i1 = 10
i2 = 10
i3 = 5
seed = 13

[eval]
swap_fraction = 0.5
seed = 17
"#;

/// Materialize the mini-corpus, scripts, and a ready-to-run config under
/// `dir`, returning the loaded configuration.
pub fn write_fixtures(dir: &Path) -> Result<PipelineConfig, StoreError> {
    std::fs::create_dir_all(dir).map_err(|source| StoreError::Io {
        path: dir.to_path_buf(),
        source,
    })?;

    let mut apis = String::new();
    for doc in mini_apis() {
        apis.push_str(&doc.to_string());
        apis.push('\n');
    }
    write_atomic(&dir.join("apis.jsonl"), apis.as_bytes())?;

    let mut queries = String::new();
    for query in mini_queries() {
        queries.push_str(&crate::model::canonical_json(&query));
        queries.push('\n');
    }
    write_atomic(&dir.join("queries.jsonl"), queries.as_bytes())?;

    for (name, entries) in golden_scripts() {
        let mut body = serde_json::to_string_pretty(&entries).expect("scripts serialize");
        body.push('\n');
        write_atomic(&dir.join("scripts").join(format!("{name}.json")), body.as_bytes())?;
    }

    let config_path = dir.join("config.toml");
    write_atomic(&config_path, FIXTURE_CONFIG.as_bytes())?;
    PipelineConfig::load(&config_path)
}
