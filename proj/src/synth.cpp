#include "adadec/synth.hpp"

#include <functional>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "adadec/random.hpp"

namespace adadec {

namespace {

using Pool = std::vector<std::string>;

const std::map<std::string, Pool>& value_pools() {
  static const std::map<std::string, Pool> pools = {
      {"first", {"anna", "boris", "carla", "david", "elena", "felix", "greta", "hugo", "irene", "jonas", "karin",
                 "luca", "marta", "nils", "olga", "pavel", "rosa", "stefan", "tomas", "vera"}},
      {"last", {"berg", "costa", "dahl", "ferreira", "gruber", "holm", "ivanov", "jensen", "kowalski", "lindqvist",
                "moreau", "novak", "olsen", "petrov", "rossi", "schmidt", "tanaka", "urban", "weber", "zeller"}},
      {"year", {"1931", "1944", "1952", "1958", "1963", "1967", "1971", "1976", "1980", "1984", "1988", "1991",
                "1995"}},
      {"death", {"1999", "2003", "2008", "2011", "2015", "2019"}},
      {"place", {"vienna", "lisbon", "oslo", "krakow", "lyon", "porto", "turin", "graz", "bergen", "gdansk",
                 "new york", "buenos aires", "san diego", "cape town"}},
      {"country", {"austria", "portugal", "norway", "poland", "france", "italy", "sweden", "chile", "canada",
                   "japan"}},
      {"team", {"fc porto", "rapid wien", "rosenborg", "lech poznan", "olympique lyon", "torino", "malmo ff",
                "colo colo"}},
      {"position", {"midfielder", "defender", "striker", "goalkeeper"}},
      {"instrument", {"cello", "piano", "violin", "guitar", "trumpet", "drums", "saxophone"}},
      {"genre", {"jazz", "folk", "rock", "classical", "blues", "electronic"}},
      {"party", {"labour", "green", "liberal", "conservative", "social democratic", "centre"}},
      {"office", {"mayor", "senator", "minister of finance", "member of parliament", "governor"}},
      {"field", {"chemistry", "topology", "genetics", "astronomy", "linguistics", "robotics", "ecology"}},
      {"university", {"uppsala university", "university of porto", "eth zurich", "university of oslo",
                      "jagiellonian university", "sorbonne university"}},
      {"award", {"wolf prize", "fields medal", "balzan prize", "crafoord prize", "holberg prize"}},
      {"movement", {"cubism", "expressionism", "surrealism", "impressionism", "futurism", "minimalism"}},
      {"work", {"the silent harbour", "winter letters", "a house of glass", "the last ferry", "salt and iron",
                "northern lights"}},
      {"film", {"the long night", "blue river", "paper moon", "city of echoes", "the quiet hour", "red sky"}},
      {"company", {"siemens", "volvo", "nokia", "fiat", "philips", "ericsson", "airbus"}},
      {"specialty", {"bridges", "turbines", "railways", "semiconductors", "aircraft engines"}},
  };
  return pools;
}

// One slot in a template: attribute name in the table, value pool.
struct Slot {
  std::string attribute;
  std::string pool;
};

struct Template {
  std::vector<Slot> slots;  // slot 0 is always the name
  // Target phrasing; receives slot values in slot order.
  std::function<std::string(const std::vector<std::string>&)> phrase;
};

const std::vector<Template>& templates() {
  static const std::vector<Template> all = {
      {{{"name", ""}, {"birth_date", "year"}, {"club", "team"}, {"position", "position"}},
       [](const auto& v) {
         return v[0] + " ( born " + v[1] + " ) is a professional " + v[3] + " who currently plays for " + v[2] +
                " .";
       }},
      {{{"name", ""}, {"instrument", "instrument"}, {"genre", "genre"}, {"origin", "place"}},
       [](const auto& v) {
         return v[0] + " is a " + v[2] + " musician from " + v[3] + " , known mainly for playing the " + v[1] +
                " .";
       }},
      {{{"name", ""}, {"party", "party"}, {"office", "office"}, {"birth_date", "year"}},
       [](const auto& v) {
         return v[0] + " , born in " + v[3] + " , is a politician of the " + v[1] + " party who served as " + v[2] +
                " .";
       }},
      {{{"name", ""}, {"field", "field"}, {"workplace", "university"}, {"awards", "award"}},
       [](const auto& v) {
         return v[0] + " is a researcher in " + v[1] + " at " + v[2] + " and a recipient of the " + v[3] + " .";
       }},
      {{{"name", ""}, {"birth_date", "year"}, {"death_date", "death"}, {"movement", "movement"}},
       [](const auto& v) {
         return v[0] + " ( " + v[1] + " - " + v[2] + " ) was a painter closely associated with " + v[3] + " .";
       }},
      {{{"name", ""}, {"nationality", "country"}, {"notable_works", "work"}, {"birth_place", "place"}},
       [](const auto& v) {
         return v[0] + " is a writer from " + v[1] + " , born in " + v[3] + " , whose best known novel is " + v[2] +
                " .";
       }},
      {{{"name", ""}, {"birth_place", "place"}, {"known_for", "film"}, {"birth_date", "year"}},
       [](const auto& v) {
         return "born in " + v[1] + " in " + v[3] + " , " + v[0] + " is an actor who starred in " + v[2] + " .";
       }},
      {{{"name", ""}, {"employer", "company"}, {"discipline", "specialty"}, {"nationality", "country"}},
       [](const auto& v) {
         return v[0] + " is an engineer from " + v[3] + " working on " + v[2] + " for " + v[1] + " .";
       }},
  };
  return all;
}

std::string draw(const Pool& pool, RandomStream& rng) { return pool[rng.below(pool.size())]; }

}  // namespace

SynthCorpus generate_synthetic(const SynthConfig& config) {
  const auto& tmpl = templates();
  if (config.templates < 1 || config.templates > tmpl.size())
    throw std::invalid_argument("synth: templates must be in 1.." + std::to_string(tmpl.size()));
  if (config.pairs < 1) throw std::invalid_argument("synth: pairs must be >= 1");
  if (config.dev_fraction < 0 || config.test_fraction < 0 || config.dev_fraction + config.test_fraction >= 1.0)
    throw std::invalid_argument("synth: dev_fraction + test_fraction must lie in [0, 1)");

  RandomStream rng(config.seed);
  const auto& pools = value_pools();
  std::vector<std::string> lines;
  lines.reserve(config.pairs);
  for (std::size_t i = 0; i < config.pairs; ++i) {
    const std::size_t t = i % config.templates;
    const Template& tp = tmpl[t];
    std::vector<std::string> values;
    nlohmann::json records = nlohmann::json::array();
    for (const Slot& slot : tp.slots) {
      std::string value = slot.pool.empty() ? draw(pools.at("first"), rng) + " " + draw(pools.at("last"), rng)
                                            : draw(pools.at(slot.pool), rng);
      records.push_back({slot.attribute, value});
      values.push_back(std::move(value));
    }
    nlohmann::json obj;
    obj["records"] = records;
    obj["target"] = tp.phrase(values);
    obj["template"] = t;
    lines.push_back(obj.dump());
  }
  rng.shuffle(lines);

  const auto n = lines.size();
  const auto n_test = static_cast<std::size_t>(static_cast<double>(n) * config.test_fraction);
  const auto n_dev = static_cast<std::size_t>(static_cast<double>(n) * config.dev_fraction);
  SynthCorpus out;
  out.test.assign(lines.begin(), lines.begin() + static_cast<std::ptrdiff_t>(n_test));
  out.dev.assign(lines.begin() + static_cast<std::ptrdiff_t>(n_test),
                 lines.begin() + static_cast<std::ptrdiff_t>(n_test + n_dev));
  out.train.assign(lines.begin() + static_cast<std::ptrdiff_t>(n_test + n_dev), lines.end());
  return out;
}

}  // namespace adadec
