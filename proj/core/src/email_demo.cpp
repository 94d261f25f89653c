#include "toolcoach/email_demo.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <set>

#include "json.hpp"
#include "toolcoach/errors.hpp"
#include "toolcoach/rng.hpp"
#include "toolcoach/version.hpp"

namespace toolcoach::email_demo {

using nlohmann::json;

namespace {

std::string lower(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string normalize_ws(std::string_view s) {
    std::string out;
    bool pending = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending = !out.empty();
            continue;
        }
        if (pending) {
            out += ' ';
            pending = false;
        }
        out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

// Deterministic pseudo-random stream for corpus generation.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}
    uint64_t next() { return state_ = splitmix64(state_); }
    size_t below(size_t n) { return static_cast<size_t>(next() % n); }

private:
    uint64_t state_;
};

const std::vector<std::string>& first_names() {
    static const std::vector<std::string> names = {
        "Shari",  "Marcus",  "Ingrid",  "Tobias", "Priya",   "Dmitri", "Yolanda", "Felix",
        "Noor",   "Caleb",   "Mireille", "Stefan", "Adaeze",  "Hiroshi", "Leonie", "Omar",
        "Greta",  "Rafael",  "Sanne",   "Viktor", "Imani",   "Bjorn",  "Celeste", "Darius",
        "Elif",   "Gustav",  "Halima",  "Ivar",   "Jolanta", "Kenji",  "Lucinda", "Matteo",
        "Nadira", "Oskar",   "Paloma",  "Quentin", "Rosalind", "Sigrid", "Tarek",  "Ulla",
        "Vance",  "Wanda",   "Xavier",  "Yusuf",  "Zelda",   "Anton",  "Beatriz", "Casimir",
        "Delphine", "Edmund", "Farida", "Gideon", "Henrike", "Isolde", "Jasper", "Katrine"};
    return names;
}

const std::vector<std::string>& cities() {
    static const std::vector<std::string> values = {
        "Portland", "Zagreb",   "Kyoto",    "Marseille", "Tampere",  "Cusco",    "Windhoek",
        "Galway",   "Brno",     "Valencia", "Quebec",    "Salzburg", "Bergen",   "Antwerp",
        "Krakow",   "Lubeck",   "Oaxaca",   "Palermo",   "Riga",     "Seville",  "Tallinn",
        "Uppsala",  "Verona",   "Winnipeg", "Yokohama",  "Zermatt",  "Aarhus",   "Bilbao",
        "Cardiff",  "Dresden",  "Eugene",   "Fresno",    "Geneva",   "Hobart",   "Innsbruck",
        "Jaipur",   "Kingston", "Leipzig",  "Malaga",    "Nantes"};
    return values;
}

const std::vector<std::string>& codenames() {
    static const std::vector<std::string> values = {
        "falcon",   "juniper", "quartz",   "meridian", "bluefin", "cascade", "dynamo",
        "ember",    "foxtrot", "glacier",  "harbor",   "ibis",    "jackal",  "kestrel",
        "lantern",  "monsoon", "nimbus",   "orchid",   "pelican", "quasar",  "redwood",
        "sextant",  "timber",  "umbra",    "vortex",   "walnut",  "xenon",   "yarrow",
        "zephyr",   "anchor",  "bramble",  "cobalt",   "drifter", "ellipse", "fathom",
        "gondola",  "hickory", "ironwood", "jigsaw",   "krypton", "lagoon",  "mallard",
        "narwhal",  "obelisk", "pampas",   "quiver",   "rooster", "saffron", "trellis",
        "underwood"};
    return values;
}

const std::vector<std::string>& companies() {
    static const std::vector<std::string> values = {
        "Altavista", "Brightwater", "Cormorant", "Dovetail",  "Everline",  "Fernbrook",
        "Gatewick",  "Hollowell",   "Ironside",  "Jettison",  "Kilbride",  "Longmont",
        "Mistral",   "Northgate",   "Ovation",   "Pinebox",   "Quillson",  "Ravenna",
        "Saltstone", "Thornbury",   "Umberton",  "Vantage",   "Westbrook", "Yardley"};
    return values;
}

const std::vector<std::string>& months() {
    static const std::vector<std::string> values = {"January",   "February", "March",    "April",
                                                    "May",       "June",     "July",     "August",
                                                    "September", "October",  "November", "December"};
    return values;
}

const std::vector<std::string>& weekdays() {
    static const std::vector<std::string> values = {"Monday", "Tuesday", "Wednesday", "Thursday",
                                                    "Friday"};
    return values;
}

const std::set<std::string>& stopwords() {
    static const std::set<std::string> words = {
        "a",    "an",   "and",  "are",  "at",   "be",   "by",   "did", "do",    "does", "for",
        "from", "how",  "in",   "is",   "it",   "of",   "on",   "or",  "s",     "the",  "their",
        "them", "then", "this", "to",   "was",  "were", "what", "when", "where", "which", "who",
        "whom", "why",  "will", "with", "much", "many"};
    return words;
}

struct Fact {
    std::string question;
    std::string gold_answer;
    std::string subject;
    std::string body;
};

std::string dollars(Rng& rng) {
    return "$" + std::to_string(50 + rng.below(900)) + "," + "000";
}

Fact make_fact(size_t index, Rng& rng) {
    const std::string person = first_names()[index % first_names().size()];
    const std::string city = cities()[(index * 7 + 3) % cities().size()];
    const std::string project = codenames()[index % codenames().size()];
    const std::string company = companies()[(index * 5 + 1) % companies().size()];
    const std::string month = months()[rng.below(months().size())];
    const std::string weekday = weekdays()[rng.below(weekdays().size())];
    const int day = 1 + static_cast<int>(rng.below(28));
    const int year = 2000 + static_cast<int>(rng.below(3));

    Fact fact;
    switch (index % 5) {
        case 0:
            fact.question = "When is " + person + "'s move to " + city + " targeted for?";
            fact.gold_answer = month + " " + std::to_string(year);
            fact.subject = "Relocation update for " + person;
            fact.body = "Hi all,\n" + person + "'s move to " + city + " is targeted for " +
                        fact.gold_answer + ". Facilities will follow up on the logistics.";
            break;
        case 1: {
            const std::string room = "conference room " + std::to_string(1 + rng.below(9));
            fact.question = "Where is the " + project + " review meeting being held?";
            fact.gold_answer = room;
            fact.subject = "Agenda: " + project + " review";
            fact.body = "Team,\nThe " + project + " review meeting is being held in " + room +
                        " on " + weekday + ". Please bring the latest figures.";
            break;
        }
        case 2:
            fact.question = "What is the approved budget for the " + project + " initiative?";
            fact.gold_answer = dollars(rng);
            fact.subject = "Budget decision: " + project;
            fact.body = "FYI,\nThe approved budget for the " + project + " initiative is " +
                        fact.gold_answer + ". Finance signed off this morning.";
            break;
        case 3:
            fact.question = "When does " + person + "'s flight to " + city + " depart?";
            fact.gold_answer = month + " " + std::to_string(day);
            fact.subject = "Travel itinerary for " + person;
            fact.body = "Reminder:\n" + person + "'s flight to " + city + " departs on " +
                        fact.gold_answer + ". The return leg is still unbooked.";
            break;
        default:
            fact.question = "When is the " + company + " contract renewal deadline?";
            fact.gold_answer = month + " " + std::to_string(day) + ", " + std::to_string(year);
            fact.subject = company + " contract renewal";
            fact.body = "Legal flagged that the " + company + " contract renewal deadline is " +
                        fact.gold_answer + ". We need signatures before then.";
            break;
    }
    return fact;
}

// Noise pools deliberately disjoint from the planted entity pools.
EmailRecord make_noise_email(size_t index, Rng& rng) {
    static const std::vector<std::string> noise_people = {"pat",   "sam",  "alex", "chris",
                                                          "robin", "terry", "jude", "morgan"};
    static const std::vector<std::string> subjects = {
        "Weekly status update",       "Lunch plans",
        "IT maintenance window",      "Parking garage closure",
        "Printer on floor 3",         "All hands rescheduled",
        "Expense reports due",        "New coffee machine",
        "Fire drill announcement",    "Holiday schedule"};
    static const std::vector<std::string> bodies = {
        "Just a quick note that the usual sync stays where it was. Nothing else to add.",
        "The vendor confirmed the ticket was resolved. Closing the loop here.",
        "Please remember to submit your timesheet before the end of the week.",
        "The elevator inspection finished without findings. Back to normal operation.",
        "Canteen menu changes take effect next week. Feedback goes to facilities.",
        "This is an automated reminder to rotate your password.",
        "Minutes from the last sync are attached to the shared drive as usual.",
        "The quarterly survey is open until the end of the month."};

    EmailRecord record;
    record.sender = noise_people[rng.below(noise_people.size())] + "@corp.example";
    record.recipients = {noise_people[rng.below(noise_people.size())] + "@corp.example"};
    record.subject = subjects[rng.below(subjects.size())];
    record.body = bodies[rng.below(bodies.size())];
    (void)index;
    return record;
}

std::string iso_date(Rng& rng) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", 2000 + static_cast<int>(rng.below(3)),
                  1 + static_cast<int>(rng.below(12)), 1 + static_cast<int>(rng.below(28)));
    return buf;
}

}  // namespace

std::vector<std::string> extract_keywords(const std::string& question) {
    std::vector<std::string> keywords;
    std::set<std::string> seen;
    std::string token;
    auto flush = [&] {
        if (!token.empty() && !stopwords().count(token) && !seen.count(token)) {
            seen.insert(token);
            keywords.push_back(token);
        }
        token.clear();
    };
    for (char c : question) {
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '$') {
            token += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else {
            flush();
        }
    }
    flush();
    return keywords;
}

std::pair<Corpus, std::vector<EvalItem>> build_corpus(uint64_t seed, int n_emails) {
    if (n_emails < 50) throw InvalidArgument("build_corpus requires n_emails >= 50");

    Rng rng(mix_seed(seed, 0xe4a11ULL));
    const size_t total = static_cast<size_t>(n_emails);
    const size_t fact_count = total / 20;
    const size_t stride = total / fact_count;

    Corpus corpus;
    corpus.reserve(total);
    std::vector<EvalItem> items;
    items.reserve(fact_count);

    size_t next_fact = 0;
    for (size_t i = 0; i < total; ++i) {
        EmailRecord record;
        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "m%06u", static_cast<unsigned>(i));
        record.message_id = idbuf;
        record.date = iso_date(rng);

        if (next_fact < fact_count && i == next_fact * stride) {
            Fact fact = make_fact(next_fact, rng);
            const std::string person = lower(first_names()[next_fact % first_names().size()]);
            record.sender = person + "@corp.example";
            record.recipients = {"team@corp.example"};
            record.subject = fact.subject;
            record.body = fact.body;
            items.push_back(EvalItem{fact.question, fact.gold_answer, record.message_id});
            ++next_fact;
        } else {
            EmailRecord noise = make_noise_email(i, rng);
            record.sender = noise.sender;
            record.recipients = noise.recipients;
            record.subject = noise.subject;
            record.body = noise.body;
        }
        corpus.push_back(std::move(record));
    }

    verify_solvability(corpus, items);
    return {std::move(corpus), std::move(items)};
}

std::vector<SearchResult> search_emails(const Corpus& corpus,
                                        const std::vector<std::string>& keywords) {
    if (keywords.empty()) throw InvalidArgument("keywords required");

    struct Hit {
        size_t index;
        int match_count;
    };
    std::vector<Hit> hits;
    std::vector<std::string> lowered;
    lowered.reserve(keywords.size());
    for (const std::string& k : keywords) lowered.push_back(lower(k));

    for (size_t i = 0; i < corpus.size(); ++i) {
        const std::string haystack = lower(corpus[i].subject + "\n" + corpus[i].body);
        int count = 0;
        bool all = true;
        for (const std::string& k : lowered) {
            if (k.empty()) continue;
            int occurrences = 0;
            for (size_t pos = haystack.find(k); pos != std::string::npos;
                 pos = haystack.find(k, pos + 1)) {
                ++occurrences;
            }
            if (occurrences == 0) {
                all = false;
                break;
            }
            count += occurrences;
        }
        if (all) hits.push_back(Hit{i, count});
    }

    std::sort(hits.begin(), hits.end(), [&](const Hit& a, const Hit& b) {
        if (a.match_count != b.match_count) return a.match_count > b.match_count;
        if (corpus[a.index].date != corpus[b.index].date)
            return corpus[a.index].date > corpus[b.index].date;
        return corpus[a.index].message_id < corpus[b.index].message_id;
    });
    if (hits.size() > 10) hits.resize(10);

    std::vector<SearchResult> results;
    results.reserve(hits.size());
    for (const Hit& hit : hits) {
        const EmailRecord& record = corpus[hit.index];
        SearchResult result;
        result.message_id = record.message_id;
        result.subject = record.subject;
        result.snippet = record.body.substr(0, 90);
        results.push_back(std::move(result));
    }
    return results;
}

std::string render_search_results(const std::vector<SearchResult>& results) {
    json arr = json::array();
    for (const SearchResult& r : results) {
        arr.push_back({{"message_id", r.message_id}, {"subject", r.subject}, {"snippet", r.snippet}});
    }
    return arr.dump();
}

std::string read_email(const Corpus& corpus, const std::string& message_id) {
    for (const EmailRecord& record : corpus) {
        if (record.message_id != message_id) continue;
        std::string out = "Message-ID: " + record.message_id + "\nDate: " + record.date +
                          "\nFrom: " + record.sender + "\nTo: ";
        for (size_t i = 0; i < record.recipients.size(); ++i) {
            if (i > 0) out += ", ";
            out += record.recipients[i];
        }
        out += "\nSubject: " + record.subject + "\n\n" + record.body;
        return out;
    }
    return "ERROR: no such message_id";
}

ToolRegistry make_email_registry(std::shared_ptr<const Corpus> corpus) {
    ToolRegistry registry;

    ToolSpec search_spec;
    search_spec.name = "search_emails";
    search_spec.description = "Search the inbox; returns matching (message_id, subject, snippet).";
    search_spec.args = {{"keywords", ToolArg::Type::string_list, "keywords that must all match", true}};
    registry.register_tool(search_spec, [corpus](const ToolArgs& args) -> std::string {
        const std::vector<std::string>& keywords = args.get_string_list("keywords");
        if (keywords.empty()) return "ERROR: keywords required";
        return render_search_results(search_emails(*corpus, keywords));
    });

    ToolSpec read_spec;
    read_spec.name = "read_email";
    read_spec.description = "Read one email in full by its message_id.";
    read_spec.args = {{"message_id", ToolArg::Type::string, "id from a search result", true}};
    registry.register_tool(read_spec, [corpus](const ToolArgs& args) -> std::string {
        return read_email(*corpus, args.get_string("message_id"));
    });

    return registry;
}

void verify_solvability(const Corpus& corpus, const std::vector<EvalItem>& items) {
    for (const EvalItem& item : items) {
        const std::vector<std::string> keywords = extract_keywords(item.question);
        if (keywords.empty()) throw Error("no keywords for question: " + item.question);
        const std::vector<SearchResult> results = search_emails(corpus, keywords);
        bool found = false;
        for (const SearchResult& r : results) {
            if (r.message_id == item.supporting_message_id) {
                found = true;
                break;
            }
        }
        if (!found) {
            throw Error("search does not surface supporting email for: " + item.question);
        }
        const std::string rendered = read_email(corpus, item.supporting_message_id);
        if (rendered.find(item.gold_answer) == std::string::npos) {
            throw Error("gold answer missing from supporting email for: " + item.question);
        }
    }
}

std::shared_ptr<Policy> make_expert_policy(const std::vector<EvalItem>& items) {
    auto by_question = std::make_shared<std::map<std::string, EvalItem>>();
    for (const EvalItem& item : items) (*by_question)[item.question] = item;

    auto fn = [by_question](const std::string& prompt) -> std::string {
        // Recover the question from the prompt's QUERY line.
        std::string question;
        constexpr std::string_view marker = "QUERY: ";
        size_t pos = prompt.find(marker);
        if (pos != std::string::npos) {
            size_t end = prompt.find('\n', pos);
            if (end == std::string::npos) end = prompt.size();
            question = prompt.substr(pos + marker.size(), end - pos - marker.size());
        }
        auto it = by_question->find(question);
        if (it == by_question->end()) return "FINAL: unknown";
        const EvalItem& item = it->second;

        const size_t tool_turns = [&] {
            size_t count = 0;
            for (size_t p = prompt.find("TOOL: "); p != std::string::npos;
                 p = prompt.find("TOOL: ", p + 1)) {
                ++count;
            }
            return count;
        }();

        if (tool_turns == 0) {
            std::string call = "search_emails(keywords=[";
            const std::vector<std::string> keywords = extract_keywords(item.question);
            for (size_t i = 0; i < keywords.size(); ++i) {
                if (i > 0) call += ", ";
                call += '"' + keywords[i] + '"';
            }
            call += "])";
            return "Searching the inbox.\n```\n" + call + "\n```";
        }
        if (tool_turns == 1) {
            return "Reading the best match.\n```\nread_email(message_id=\"" +
                   item.supporting_message_id + "\")\n```";
        }
        return "FINAL: " + item.gold_answer;
    };
    return std::make_shared<CallbackPolicy>(fn, "email-expert");
}

bool answer_matches(const std::string& answer, const std::string& gold) {
    const std::string a = normalize_ws(answer);
    const std::string g = normalize_ws(gold);
    if (g.empty()) return false;
    return a.find(g) != std::string::npos;
}

double evaluate_correctness(Policy& policy, const ToolRegistry& registry,
                            const EpisodeConfig& config, const std::vector<EvalItem>& items) {
    if (items.empty()) throw InvalidArgument("evaluate_correctness needs at least one item");
    const double saved_temperature = policy.sampling().temperature;
    policy.set_temperature(0.0);
    int correct = 0;
    for (size_t i = 0; i < items.size(); ++i) {
        Trace trace = run_episode(policy, registry, items[i].question, config,
                                  /*episode_seed=*/i);
        if (trace.terminated != Trace::Terminated::answered || trace.turns.empty()) continue;
        const auto& answer = trace.turns.back().parsed_completion.final_answer;
        if (answer && answer_matches(*answer, items[i].gold_answer)) ++correct;
    }
    policy.set_temperature(saved_temperature);
    return static_cast<double>(correct) / static_cast<double>(items.size());
}

namespace {

json email_to_json(const EmailRecord& r) {
    return json{{"message_id", r.message_id}, {"date", r.date},       {"sender", r.sender},
                {"recipients", r.recipients}, {"subject", r.subject}, {"body", r.body}};
}

EmailRecord email_from_json(const json& j) {
    EmailRecord r;
    r.message_id = j.at("message_id").get<std::string>();
    r.date = j.at("date").get<std::string>();
    r.sender = j.at("sender").get<std::string>();
    r.recipients = j.at("recipients").get<std::vector<std::string>>();
    r.subject = j.at("subject").get<std::string>();
    r.body = j.at("body").get<std::string>();
    return r;
}

}  // namespace

void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
    std::vector<std::string> records;
    records.reserve(corpus.size());
    for (const EmailRecord& r : corpus) records.push_back(email_to_json(r).dump());
    write_record_file(path, RecordFileHeader{kSchemaVersion, "email-demo"}, records);
}

Corpus read_corpus(const std::filesystem::path& path) {
    auto [header, records] = read_record_file(path);
    Corpus corpus;
    corpus.reserve(records.size());
    try {
        for (const std::string& record : records) {
            corpus.push_back(email_from_json(json::parse(record)));
        }
    } catch (const json::exception& e) {
        throw DecodeError(std::string("malformed corpus record: ") + e.what());
    }
    return corpus;
}

void write_eval_items(const std::filesystem::path& path, const std::vector<EvalItem>& items) {
    std::vector<std::string> records;
    records.reserve(items.size());
    for (const EvalItem& item : items) {
        records.push_back(json{{"question", item.question},
                               {"gold_answer", item.gold_answer},
                               {"supporting_message_id", item.supporting_message_id}}
                              .dump());
    }
    write_record_file(path, RecordFileHeader{kSchemaVersion, "email-demo"}, records);
}

std::vector<EvalItem> read_eval_items(const std::filesystem::path& path) {
    auto [header, records] = read_record_file(path);
    std::vector<EvalItem> items;
    items.reserve(records.size());
    try {
        for (const std::string& record : records) {
            json j = json::parse(record);
            items.push_back(EvalItem{j.at("question").get<std::string>(),
                                     j.at("gold_answer").get<std::string>(),
                                     j.at("supporting_message_id").get<std::string>()});
        }
    } catch (const json::exception& e) {
        throw DecodeError(std::string("malformed eval item record: ") + e.what());
    }
    return items;
}

}  // namespace toolcoach::email_demo
