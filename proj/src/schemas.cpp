#include "pedsynth/schemas.hpp"

#include "pedsynth/error.hpp"

#include <array>
#include <utility>

namespace pedsynth {

namespace {

using Entry = std::pair<std::string, std::string>; // attribute, phrase

struct CategoryDef {
    const char *name;
    bool exclusive;
    std::vector<Entry> entries;
};

AttributeSchema make_schema(std::string id, const std::vector<CategoryDef> &defs, std::string description = {}) {
    std::vector<AttributeCategory> cats;
    std::map<std::string, std::string> phrases;
    for (const auto &d : defs) {
        AttributeCategory c{d.name, {}, d.exclusive};
        for (const auto &[attr, phrase] : d.entries) {
            c.attributes.emplace_back(attr);
            phrases[attr] = phrase;
        }
        cats.push_back(std::move(c));
    }
    return AttributeSchema(std::move(id), std::move(cats), std::move(phrases), std::move(description));
}

constexpr std::array<const char *, 11> kPetaColours = {"black", "blue", "brown", "green", "grey", "orange",
                                                        "pink", "purple", "red", "white", "yellow"};

CategoryDef colour_category(const char *category, const char *prefix, const char *phrase_prefix) {
    CategoryDef d{category, true, {}};
    for (const char *colour : kPetaColours) {
        std::string attr = std::string(prefix) + static_cast<char>(colour[0] - 'a' + 'A') + (colour + 1);
        d.entries.emplace_back(std::move(attr), std::string(phrase_prefix) + " " + colour);
    }
    return d;
}

} // namespace

AttributeSchema rapzs_schema() {
    static const AttributeSchema schema = make_schema(
        "RAPzs",
        {
            {"head", false, {{"BaldHead", "bald"}, {"LongHair", "long hair"}, {"BlackHair", "black hair"}, {"Hat", "hat"}, {"Glasses", "glasses"}}},
            {"upper body",
             false,
             {{"Shirt", "shirt"},
              {"Sweater", "sweater"},
              {"Vest", "vest"},
              {"TShirt", "t-shirt"},
              {"Cotton", "cotton"},
              {"Jacket", "jacket"},
              {"SuitUp", "suit"},
              {"Tight", "tight"},
              {"ShortSleeve", "short sleeve"},
              {"Others", "other top"}}},
            {"lower body",
             false,
             {{"LongTrousers", "long trousers"},
              {"Skirt", "skirt"},
              {"ShortSkirt", "short skirt"},
              {"Dress", "dress"},
              {"Jeans", "jeans"},
              {"TightTrousers", "tight trousers"}}},
            {"footwear",
             false,
             {{"shoes-Leather", "leather shoes"},
              {"shoes-Sports", "sports shoes"},
              {"shoes-Boots", "boots"},
              {"shoes-Cloth", "cloth shoes"},
              {"shoes-Casual", "casual shoes"},
              {"shoes-Other", "other shoes"}}},
            {"accessory",
             false,
             {{"attachment-Backpack", "backpack"},
              {"attachment-ShoulderBag", "shoulder bag"},
              {"attachment-HandBag", "hand bag"},
              {"attachment-Box", "box"},
              {"attachment-PlasticBag", "plastic bag"},
              {"attachment-PaperBag", "paper bag"},
              {"attachment-HandTrunk", "hand trunk"},
              {"attachment-Other", "other attachment"}}},
            {"age",
             true,
             {{"AgeLess16", "younger than 16"}, {"Age17-30", "aged 17 to 30"}, {"Age31-45", "aged 31 to 45"}, {"Age46-60", "aged 46 to 60"}}},
            {"gender", true, {{"Male", "male"}, {"Female", "female"}}},
            {"body shape", true, {{"BodyFat", "fat"}, {"BodyNormal", "normal build"}, {"BodyThin", "thin"}}},
            {"role", true, {{"Customer", "customer"}, {"Employee", "employee"}}},
            {"action",
             false,
             {{"action-Calling", "calling"},
              {"action-Talking", "talking"},
              {"action-Gathering", "gathering"},
              {"action-Holding", "holding"},
              {"action-Pushing", "pushing"},
              {"action-Pulling", "pulling"},
              {"action-CarryingByArm", "carrying by arm"},
              {"action-CarryingByHand", "carrying by hand"},
              {"action-Other", "other action"}}},
        },
        "The images are captured by a video surveillance cameras at indoor scenes. Each image has a caption where "
        "attributes are described. The size of each image is around 90 x 180 pixels.");
    return schema;
}

AttributeSchema petazs_schema() {
    static const AttributeSchema schema = make_schema(
        "PETAzs",
        {
            {"gender", true, {{"personalMale", "man"}, {"personalFemale", "woman"}}},
            colour_category("hair color", "hairColor", "hair color"),
            {"hair", true, {{"hairLong", "long hair"}, {"hairBald", "bald"}, {"hairShort", "short hair"}}},
            colour_category("upper color", "upperBody", "upper body"),
            {"upper body",
             false,
             {{"upperBodyCasual", "casual top"},
              {"upperBodyFormal", "formal top"},
              {"upperBodyJacket", "jacket"},
              {"upperBodyLogo", "logo"},
              {"upperBodyPlaid", "plaid top"},
              {"upperBodyThinStripes", "thin stripes top"},
              {"upperBodyTshirt", "t shirt"},
              {"upperBodyOther", "other top"},
              {"upperBodyVNeck", "vneck"}}},
            colour_category("lower color", "lowerBody", "lower body"),
            {"lower body",
             false,
             {{"lowerBodyCasual", "casual"},
              {"lowerBodyFormal", "formal"},
              {"lowerBodyJeans", "jeans"},
              {"lowerBodyShorts", "shorts"},
              {"lowerBodyShortSkirt", "shortskirt"},
              {"lowerBodyTrousers", "trousers"},
              {"lowerBodyCapri", "capri"},
              {"lowerBodyHotPants", "hotpants"},
              {"lowerBodyLongSkirt", "long skirt"},
              {"lowerBodyPlaid", "plaid"},
              {"lowerBodyThinStripes", "thin stripes"},
              {"lowerBodySuits", "suits"}}},
            {"attachment",
             false,
             {{"carryingBackpack", "backpack"},
              {"carryingOther", "other"},
              {"carryingMessengerBag", "messenger bag"},
              {"attachmentNothing", "no attachment"},
              {"carryingPlasticBags", "plastic bags"},
              {"carryingBabyBuggy", "baby buggy"},
              {"carryingShoppingTro", "shopping tro"},
              {"carryingUmbrella", "umbrella"},
              {"carryingFolder", "folder"},
              {"carryingLuggageCase", "luggage case"},
              {"carryingSuitcase", "suit case"}}},
            {"accessory",
             false,
             {{"accessoryHat", "hat"},
              {"accessoryMuffler", "muffler"},
              {"accessoryNothing", "no accessory"},
              {"accessorySunglasses", "sunglasses"},
              {"accessoryHeadphone", "headphone"},
              {"accessoryHairBand", "hairband"},
              {"accessoryKerchief", "kerchief"}}},
            colour_category("footwear color", "footwear", "footwear"),
            {"footwear",
             false,
             {{"footwearLeatherShoes", "leather shoes"},
              {"footwearSandals", "sandals"},
              {"footwearShoes", "shoes"},
              {"footwearSneaker", "sneakers"},
              {"footwearStocking", "stocking"}}},
        },
        "The images are captured by video surveillance cameras at outdoor and indoor scenes.");
    return schema;
}

AttributeSchema pa100k_schema() {
    static const AttributeSchema schema = make_schema(
        "PA100k",
        {
            {"gender", false, {{"Female", "woman"}}},
            {"age", true, {{"AgeOver60", "over 60"}, {"Age18-60", "adult"}, {"AgeLess18", "under 18"}}},
            {"view", true, {{"Front", "front"}, {"Side", "side"}, {"Back", "back"}}},
            {"head", false, {{"Hat", "hat"}, {"Glasses", "glasses"}}},
            {"attachment",
             false,
             {{"HandBag", "hand bag"}, {"ShoulderBag", "shoulder bag"}, {"Backpack", "back pack"}, {"HoldObjectsInFront", "holding object in front"}}},
            {"upper wearing", false, {{"ShortSleeve", "short sleeve"}, {"LongSleeve", "long sleeve"}, {"LongCoat", "long coat"}}},
            {"upper pattern", false, {{"UpperStride", "stride"}, {"UpperLogo", "logo"}, {"UpperPlaid", "plaid"}, {"UpperSplice", "splice"}}},
            {"lower clothes", false, {{"Trousers", "trousers"}, {"Shorts", "short"}, {"Skirt&Dress", "skirt or dress"}}},
            {"lower pattern", false, {{"LowerStripe", "stripe"}, {"LowerPattern", "pattern"}}},
            {"shoes", false, {{"boots", "boots"}}},
        },
        "The images are captured by outdoor surveillance cameras.");
    return schema;
}

AttributeSchema handcrafted_schema() {
    static const AttributeSchema schema = make_schema(
        "handcrafted",
        {
            {"color",
             false,
             {{"white", "white"}, {"black", "black"}, {"red", "red"}, {"blue", "blue"}, {"yellow", "yellow"}, {"orange", "orange"}}},
            {"clothes",
             false,
             {{"sweater", "sweater"}, {"t-shirt", "t-shirt"}, {"dress", "dress"}, {"jeans", "jeans"}, {"hat", "hat"}, {"hair", "hair"}}},
        });
    return schema;
}

AttributeSchema builtin_schema(std::string_view id) {
    if (id == "RAPzs") return rapzs_schema();
    if (id == "PETAzs") return petazs_schema();
    if (id == "PA100k") return pa100k_schema();
    if (id == "handcrafted") return handcrafted_schema();
    throw InvalidArgument("no built-in schema named '" + std::string(id) + "'");
}

} // namespace pedsynth
