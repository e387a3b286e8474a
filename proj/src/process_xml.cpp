#include <expat.h>

#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "skillflow/error.hpp"
#include "skillflow/process.hpp"

namespace skillflow {

namespace {

constexpr std::string_view kDiNamespace = "http://www.omg.org/spec/BPMN/20100524/DI";
constexpr std::string_view kXsiNamespace = "http://www.w3.org/2001/XMLSchema-instance";
constexpr char kSep = '\x1f';

struct XmlElement {
    std::string ns;
    std::string local;
    std::map<std::string, std::string> attrs;
    std::vector<std::unique_ptr<XmlElement>> children;
    std::string text;

    std::optional<std::string> attr(const std::string& name) const {
        auto it = attrs.find(name);
        if (it == attrs.end()) return std::nullopt;
        return it->second;
    }
    bool is(std::string_view n, std::string_view l) const { return ns == n && local == l; }
};

std::pair<std::string, std::string> split_name(const char* name) {
    std::string_view s(name);
    auto pos = s.find(kSep);
    if (pos == std::string_view::npos) return {std::string(), std::string(s)};
    return {std::string(s.substr(0, pos)), std::string(s.substr(pos + 1))};
}

std::string qualified(const std::string& ns, const std::string& local) {
    if (ns == kBpmnNamespace) return "bpmn:" + local;
    if (ns == kCapabilityNamespace) return "cap:" + local;
    if (ns == kDiNamespace) return "bpmndi:" + local;
    if (ns.empty()) return local;
    return "{" + ns + "}" + local;
}

[[noreturn]] void unsupported(const XmlElement& e) {
    std::string q = qualified(e.ns, e.local);
    throw Error(ErrorCode::UnsupportedElement, "unsupported element " + q, q);
}

[[noreturn]] void structure(const std::string& message, const std::string& subject = {}) {
    throw Error(ErrorCode::StructureError, message, subject);
}

/// Builds an element tree with expat and keeps the raw bytes of the diagram
/// interchange block.
class TreeBuilder {
public:
    struct Result {
        std::unique_ptr<XmlElement> root;
        std::string diagram;
        std::vector<std::pair<std::string, std::string>> root_namespaces;
    };

    Result build(std::string_view xml) {
        std::unique_ptr<XML_ParserStruct, decltype(&XML_ParserFree)> parser(XML_ParserCreateNS(nullptr, kSep),
                                                                            &XML_ParserFree);
        if (!parser) throw Error(ErrorCode::XmlError, "cannot create XML parser");
        parser_ = parser.get();
        XML_SetUserData(parser_, this);
        XML_SetElementHandler(parser_, &TreeBuilder::on_start, &TreeBuilder::on_end);
        XML_SetCharacterDataHandler(parser_, &TreeBuilder::on_text);
        XML_SetStartNamespaceDeclHandler(parser_, &TreeBuilder::on_namespace);
        xml_ = xml;
        if (XML_Parse(parser_, xml.data(), static_cast<int>(xml.size()), XML_TRUE) == XML_STATUS_ERROR) {
            std::ostringstream msg;
            msg << "XML error at line " << XML_GetCurrentLineNumber(parser_) << ", column "
                << XML_GetCurrentColumnNumber(parser_) << ": " << XML_ErrorString(XML_GetErrorCode(parser_));
            throw Error(ErrorCode::XmlError, msg.str());
        }
        if (!result_.root) throw Error(ErrorCode::XmlError, "document has no root element");
        return std::move(result_);
    }

private:
    static void on_namespace(void* self, const XML_Char* prefix, const XML_Char* uri) {
        auto* b = static_cast<TreeBuilder*>(self);
        if (b->stack_.empty() && !b->result_.root)
            b->result_.root_namespaces.emplace_back(prefix ? prefix : "", uri ? uri : "");
    }

    static void on_start(void* self, const XML_Char* name, const XML_Char** atts) {
        auto* b = static_cast<TreeBuilder*>(self);
        if (b->skip_depth_ > 0) {
            ++b->skip_depth_;
            return;
        }
        auto elem = std::make_unique<XmlElement>();
        std::tie(elem->ns, elem->local) = split_name(name);
        if (b->stack_.size() == 1 && elem->ns == kDiNamespace && elem->local == "BPMNDiagram") {
            b->skip_depth_ = 1;
            auto index = XML_GetCurrentByteIndex(b->parser_);
            b->di_start_ = static_cast<std::size_t>(index);
            b->di_start_tag_end_ = static_cast<std::size_t>(index + XML_GetCurrentByteCount(b->parser_));
            return;
        }
        for (int i = 0; atts[i]; i += 2) {
            auto [ns, local] = split_name(atts[i]);
            elem->attrs[ns.empty() ? local : ns + kSep + local] = atts[i + 1];
        }
        XmlElement* raw = elem.get();
        if (b->stack_.empty()) b->result_.root = std::move(elem);
        else b->stack_.back()->children.push_back(std::move(elem));
        b->stack_.push_back(raw);
    }

    static void on_end(void* self, const XML_Char*) {
        auto* b = static_cast<TreeBuilder*>(self);
        if (b->skip_depth_ > 0) {
            if (--b->skip_depth_ == 0) {
                auto count = XML_GetCurrentByteCount(b->parser_);
                std::size_t end = count > 0
                                      ? static_cast<std::size_t>(XML_GetCurrentByteIndex(b->parser_) + count)
                                      : b->di_start_tag_end_;
                if (!b->result_.diagram.empty()) b->result_.diagram += '\n';
                b->result_.diagram += std::string(b->xml_.substr(b->di_start_, end - b->di_start_));
            }
            return;
        }
        b->stack_.pop_back();
    }

    static void on_text(void* self, const XML_Char* s, int len) {
        auto* b = static_cast<TreeBuilder*>(self);
        if (b->skip_depth_ == 0 && !b->stack_.empty()) b->stack_.back()->text.append(s, static_cast<std::size_t>(len));
    }

    XML_Parser parser_ = nullptr;
    std::string_view xml_;
    Result result_;
    std::vector<XmlElement*> stack_;
    int skip_depth_ = 0;
    std::size_t di_start_ = 0;
    std::size_t di_start_tag_end_ = 0;
};

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string required_attr(const XmlElement& e, const char* name) {
    auto v = e.attr(name);
    if (!v || v->empty()) structure(qualified(e.ns, e.local) + " is missing attribute '" + name + "'");
    return *v;
}

ValueExpr parse_value(const std::string& text, const std::string& element) {
    try {
        return ValueExpr::parse(text);
    } catch (const ExprParseError& e) {
        structure("invalid expression in " + element + ": " + e.what(), element);
    }
}

/// Children a flow node may carry besides its own content.
bool is_flow_ref(const XmlElement& c) {
    return c.ns == kBpmnNamespace && (c.local == "incoming" || c.local == "outgoing");
}

const XmlElement* extension_elements(const XmlElement& e) {
    const XmlElement* ext = nullptr;
    for (const auto& c : e.children) {
        if (is_flow_ref(*c)) continue;
        if (c->is(kBpmnNamespace, "extensionElements")) {
            if (ext) structure("duplicate extensionElements in " + qualified(e.ns, e.local));
            ext = c.get();
            continue;
        }
        unsupported(*c);
    }
    return ext;
}

CapabilityBinding parse_binding(const XmlElement& cap, const std::string& task_id) {
    CapabilityBinding b;
    b.capability_iri = required_attr(cap, "iri");
    for (const auto& c : cap.children) {
        if (c->is(kCapabilityNamespace, "input")) {
            std::string prop = required_attr(*c, "property");
            std::string value = c->attr("value").value_or("");
            if (!b.inputs.emplace(prop, parse_value(value, task_id)).second)
                structure("duplicate input for property " + prop, task_id);
        } else if (c->is(kCapabilityNamespace, "output")) {
            std::string prop = required_attr(*c, "property");
            if (!b.outputs.emplace(prop, required_attr(*c, "variable")).second)
                structure("duplicate output for property " + prop, task_id);
        } else {
            unsupported(*c);
        }
    }
    return b;
}

NodeSpec parse_service_task(const XmlElement& e, const std::string& id) {
    CapabilityTask task;
    if (const XmlElement* ext = extension_elements(e)) {
        for (const auto& c : ext->children) {
            if (!c->is(kCapabilityNamespace, "capability")) unsupported(*c);
            if (task.binding) structure("service task carries more than one capability", id);
            task.binding = parse_binding(*c, id);
        }
    }
    return task;
}

NodeSpec parse_user_task(const XmlElement& e, const std::string& id) {
    UserTask task;
    if (const XmlElement* ext = extension_elements(e)) {
        for (const auto& c : ext->children) {
            if (!c->is(kCapabilityNamespace, "formField")) unsupported(*c);
            std::string type = c->attr("type").value_or("string");
            auto dt = parse_datatype(type);
            if (!dt) structure("unknown form field type '" + type + "'", id);
            task.fields.push_back({required_attr(*c, "name"), *dt});
        }
    }
    return task;
}

NodeSpec parse_send_task(const XmlElement& e) {
    SendTask task;
    if (const XmlElement* ext = extension_elements(e)) {
        for (const auto& c : ext->children) {
            if (c->is(kCapabilityNamespace, "subject")) task.subject = c->text;
            else if (c->is(kCapabilityNamespace, "body")) task.body = c->text;
            else unsupported(*c);
        }
    }
    return task;
}

/// Plain events: only incoming/outgoing references are accepted; any event
/// definition (message, signal, error end...) is outside the subset.
void require_plain(const XmlElement& e) {
    for (const auto& c : e.children)
        if (!is_flow_ref(*c)) unsupported(*c);
}

NodeSpec parse_timer(const XmlElement& e, const std::string& id) {
    const XmlElement* timer = nullptr;
    for (const auto& c : e.children) {
        if (is_flow_ref(*c)) continue;
        if (c->is(kBpmnNamespace, "timerEventDefinition") && !timer) timer = c.get();
        else unsupported(*c);
    }
    if (!timer) structure("intermediate catch event without timer definition", id);
    const XmlElement* duration = nullptr;
    for (const auto& c : timer->children) {
        if (c->is(kBpmnNamespace, "timeDuration") && !duration) duration = c.get();
        else unsupported(*c);
    }
    if (!duration) structure("timer needs a timeDuration", id);
    TimerCatchEvent t;
    t.duration_text = trim(duration->text);
    auto ms = parse_iso_duration(t.duration_text);
    if (!ms) structure("invalid ISO-8601 duration '" + t.duration_text + "'", id);
    t.duration = *ms;
    return t;
}

struct PendingBoundary {
    std::size_t node_index;
    std::optional<std::string> error_ref;
};

} // namespace

ProcessDefinition parse_process(std::string_view xml) {
    TreeBuilder builder;
    auto tree = builder.build(xml);
    const XmlElement& root = *tree.root;
    if (!root.is(kBpmnNamespace, "definitions")) unsupported(root);

    ProcessDefinition def;
    std::map<std::string, std::optional<std::string>> error_codes;
    const XmlElement* process = nullptr;
    for (const auto& c : root.children) {
        if (c->is(kBpmnNamespace, "process")) {
            if (process) structure("more than one process in definitions");
            process = c.get();
        } else if (c->is(kBpmnNamespace, "error")) {
            error_codes[required_attr(*c, "id")] = c->attr("errorCode");
        } else {
            unsupported(*c);
        }
    }
    if (!process) structure("definitions contain no process");
    def.id = required_attr(*process, "id");
    def.name = process->attr("name").value_or("");

    std::vector<PendingBoundary> boundaries;
    for (const auto& c : process->children) {
        const XmlElement& e = *c;
        if (e.ns != kBpmnNamespace) unsupported(e);
        if (e.local == "sequenceFlow") {
            SequenceFlow f;
            f.id = required_attr(e, "id");
            f.source = required_attr(e, "sourceRef");
            f.target = required_attr(e, "targetRef");
            f.name = e.attr("name").value_or("");
            for (const auto& cc : e.children) {
                if (!cc->is(kBpmnNamespace, "conditionExpression") || f.condition) unsupported(*cc);
                std::string text = trim(cc->text);
                if (text.empty()) structure("empty condition expression", f.id);
                f.condition = parse_value(text, f.id);
            }
            def.flows.push_back(std::move(f));
            continue;
        }
        FlowNode node;
        node.id = required_attr(e, "id");
        node.name = e.attr("name").value_or("");
        if (e.local == "startEvent") {
            require_plain(e);
            node.spec = StartEvent{};
        } else if (e.local == "endEvent") {
            require_plain(e);
            node.spec = EndEvent{};
        } else if (e.local == "exclusiveGateway") {
            require_plain(e);
            node.spec = ExclusiveGateway{e.attr("default")};
        } else if (e.local == "parallelGateway") {
            require_plain(e);
            node.spec = ParallelGateway{};
        } else if (e.local == "userTask") {
            node.spec = parse_user_task(e, node.id);
        } else if (e.local == "sendTask") {
            node.spec = parse_send_task(e);
        } else if (e.local == "serviceTask") {
            node.spec = parse_service_task(e, node.id);
        } else if (e.local == "intermediateCatchEvent") {
            node.spec = parse_timer(e, node.id);
        } else if (e.local == "boundaryEvent") {
            if (e.attr("cancelActivity").value_or("true") == "false") {
                std::string q = "bpmn:boundaryEvent[cancelActivity=false]";
                throw Error(ErrorCode::UnsupportedElement, "non-interrupting boundary events are not supported", q);
            }
            PendingBoundary pending{def.nodes.size(), std::nullopt};
            bool has_definition = false;
            for (const auto& cc : e.children) {
                if (is_flow_ref(*cc)) continue;
                if (!cc->is(kBpmnNamespace, "errorEventDefinition") || has_definition) unsupported(*cc);
                has_definition = true;
                pending.error_ref = cc->attr("errorRef");
            }
            if (!has_definition) structure("boundary event without error definition", node.id);
            boundaries.push_back(pending);
            node.spec = BoundaryErrorEvent{required_attr(e, "attachedToRef"), std::nullopt};
        } else {
            unsupported(e);
        }
        def.nodes.push_back(std::move(node));
    }

    for (const auto& b : boundaries) {
        if (!b.error_ref) continue;
        auto it = error_codes.find(*b.error_ref);
        if (it == error_codes.end())
            structure("boundary event references unknown error " + *b.error_ref, def.nodes[b.node_index].id);
        def.nodes[b.node_index].as<BoundaryErrorEvent>()->error_code = it->second;
    }

    if (!tree.diagram.empty()) {
        def.diagram = std::move(tree.diagram);
        for (auto& [prefix, uri] : tree.root_namespaces) {
            if (prefix.empty() || prefix == "bpmn" || prefix == "cap" || prefix == "xsi") continue;
            def.diagram_namespaces.emplace_back(prefix, uri);
        }
    }

    auto problems = structural_diagnostics(def);
    if (!problems.empty())
        throw Error(ErrorCode::StructureError,
                    std::string(to_string(problems.front().kind)) + ": " + problems.front().message + " (" +
                        problems.front().element + ")",
                    problems.front().element);
    return def;
}

namespace {

std::string escape(std::string_view s, bool attribute) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"':
            if (attribute) out += "&quot;";
            else out += c;
            break;
        case '\n':
            if (attribute) out += "&#10;";
            else out += c;
            break;
        case '\r': out += "&#13;"; break;
        case '\t':
            if (attribute) out += "&#9;";
            else out += c;
            break;
        default: out += c;
        }
    }
    return out;
}

class Writer {
public:
    void open(int depth, std::string_view tag, const std::vector<std::pair<std::string, std::string>>& attrs,
              bool self_close) {
        indent(depth);
        out_ << '<' << tag;
        for (const auto& [k, v] : attrs) out_ << ' ' << k << "=\"" << escape(v, true) << '"';
        out_ << (self_close ? "/>\n" : ">\n");
    }
    void close(int depth, std::string_view tag) {
        indent(depth);
        out_ << "</" << tag << ">\n";
    }
    void text_element(int depth, std::string_view tag, const std::vector<std::pair<std::string, std::string>>& attrs,
                      std::string_view text) {
        indent(depth);
        out_ << '<' << tag;
        for (const auto& [k, v] : attrs) out_ << ' ' << k << "=\"" << escape(v, true) << '"';
        out_ << '>' << escape(text, false) << "</" << tag << ">\n";
    }
    void raw(std::string_view s) { out_ << s; }
    std::string str() const { return out_.str(); }

private:
    void indent(int depth) {
        for (int i = 0; i < depth; ++i) out_ << "  ";
    }
    std::ostringstream out_;
};

using Attrs = std::vector<std::pair<std::string, std::string>>;

Attrs base_attrs(const FlowNode& n) {
    Attrs a{{"id", n.id}};
    if (!n.name.empty()) a.emplace_back("name", n.name);
    return a;
}

std::string error_id_for(const std::string& code, std::set<std::string>& used) {
    std::string id = "Error_";
    for (char c : code) id += std::isalnum(static_cast<unsigned char>(c)) || c == '_' ? c : '_';
    std::string candidate = id;
    for (int i = 2; used.contains(candidate); ++i) candidate = id + "_" + std::to_string(i);
    used.insert(candidate);
    return candidate;
}

} // namespace

std::string serialize_process(const ProcessDefinition& def) {
    std::map<std::string, std::string> error_ids;
    {
        std::set<std::string> codes;
        for (const auto& n : def.nodes)
            if (auto* b = n.as<BoundaryErrorEvent>(); b && b->error_code) codes.insert(*b->error_code);
        std::set<std::string> used;
        for (const auto& c : codes) error_ids[c] = error_id_for(c, used);
    }

    Writer w;
    w.raw("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    Attrs root{{"xmlns:bpmn", std::string(kBpmnNamespace)},
               {"xmlns:cap", std::string(kCapabilityNamespace)},
               {"xmlns:xsi", std::string(kXsiNamespace)}};
    for (const auto& [prefix, uri] : def.diagram_namespaces) root.emplace_back("xmlns:" + prefix, uri);
    root.emplace_back("id", "Definitions_" + def.id);
    root.emplace_back("targetNamespace", "urn:skillflow:process");
    w.open(0, "bpmn:definitions", root, false);

    Attrs process{{"id", def.id}};
    if (!def.name.empty()) process.emplace_back("name", def.name);
    process.emplace_back("isExecutable", "true");
    w.open(1, "bpmn:process", process, false);

    for (const auto& n : def.nodes) {
        std::visit(
            [&](const auto& spec) {
                using S = std::decay_t<decltype(spec)>;
                Attrs a = base_attrs(n);
                if constexpr (std::is_same_v<S, StartEvent>) {
                    w.open(2, "bpmn:startEvent", a, true);
                } else if constexpr (std::is_same_v<S, EndEvent>) {
                    w.open(2, "bpmn:endEvent", a, true);
                } else if constexpr (std::is_same_v<S, ExclusiveGateway>) {
                    if (spec.default_flow) a.emplace_back("default", *spec.default_flow);
                    w.open(2, "bpmn:exclusiveGateway", a, true);
                } else if constexpr (std::is_same_v<S, ParallelGateway>) {
                    w.open(2, "bpmn:parallelGateway", a, true);
                } else if constexpr (std::is_same_v<S, UserTask>) {
                    if (spec.fields.empty()) {
                        w.open(2, "bpmn:userTask", a, true);
                        return;
                    }
                    w.open(2, "bpmn:userTask", a, false);
                    w.open(3, "bpmn:extensionElements", {}, false);
                    for (const auto& f : spec.fields)
                        w.open(4, "cap:formField", {{"name", f.name}, {"type", std::string(to_string(f.datatype))}},
                               true);
                    w.close(3, "bpmn:extensionElements");
                    w.close(2, "bpmn:userTask");
                } else if constexpr (std::is_same_v<S, SendTask>) {
                    if (spec.subject.empty() && spec.body.empty()) {
                        w.open(2, "bpmn:sendTask", a, true);
                        return;
                    }
                    w.open(2, "bpmn:sendTask", a, false);
                    w.open(3, "bpmn:extensionElements", {}, false);
                    if (!spec.subject.empty()) w.text_element(4, "cap:subject", {}, spec.subject);
                    if (!spec.body.empty()) w.text_element(4, "cap:body", {}, spec.body);
                    w.close(3, "bpmn:extensionElements");
                    w.close(2, "bpmn:sendTask");
                } else if constexpr (std::is_same_v<S, CapabilityTask>) {
                    if (!spec.binding) {
                        w.open(2, "bpmn:serviceTask", a, true);
                        return;
                    }
                    const CapabilityBinding& b = *spec.binding;
                    w.open(2, "bpmn:serviceTask", a, false);
                    w.open(3, "bpmn:extensionElements", {}, false);
                    bool empty = b.inputs.empty() && b.outputs.empty();
                    w.open(4, "cap:capability", {{"iri", b.capability_iri}}, empty);
                    for (const auto& [prop, value] : b.inputs)
                        w.open(5, "cap:input", {{"property", prop}, {"value", value.source()}}, true);
                    for (const auto& [prop, variable] : b.outputs)
                        w.open(5, "cap:output", {{"property", prop}, {"variable", variable}}, true);
                    if (!empty) w.close(4, "cap:capability");
                    w.close(3, "bpmn:extensionElements");
                    w.close(2, "bpmn:serviceTask");
                } else if constexpr (std::is_same_v<S, TimerCatchEvent>) {
                    w.open(2, "bpmn:intermediateCatchEvent", a, false);
                    w.open(3, "bpmn:timerEventDefinition", {}, false);
                    w.text_element(4, "bpmn:timeDuration", {{"xsi:type", "bpmn:tFormalExpression"}},
                                   spec.duration_text);
                    w.close(3, "bpmn:timerEventDefinition");
                    w.close(2, "bpmn:intermediateCatchEvent");
                } else if constexpr (std::is_same_v<S, BoundaryErrorEvent>) {
                    a.emplace_back("attachedToRef", spec.attached_to);
                    w.open(2, "bpmn:boundaryEvent", a, false);
                    Attrs def_attrs;
                    if (spec.error_code) def_attrs.emplace_back("errorRef", error_ids.at(*spec.error_code));
                    w.open(3, "bpmn:errorEventDefinition", def_attrs, true);
                    w.close(2, "bpmn:boundaryEvent");
                }
            },
            n.spec);
    }

    for (const auto& f : def.flows) {
        Attrs a{{"id", f.id}};
        if (!f.name.empty()) a.emplace_back("name", f.name);
        a.emplace_back("sourceRef", f.source);
        a.emplace_back("targetRef", f.target);
        if (!f.condition) {
            w.open(2, "bpmn:sequenceFlow", a, true);
            continue;
        }
        w.open(2, "bpmn:sequenceFlow", a, false);
        w.text_element(3, "bpmn:conditionExpression", {{"xsi:type", "bpmn:tFormalExpression"}}, f.condition->source());
        w.close(2, "bpmn:sequenceFlow");
    }
    w.close(1, "bpmn:process");

    for (const auto& [code, id] : error_ids) w.open(1, "bpmn:error", {{"id", id}, {"name", code}, {"errorCode", code}}, true);

    if (!def.diagram.empty()) {
        w.raw("  ");
        w.raw(def.diagram);
        w.raw("\n");
    }
    w.close(0, "bpmn:definitions");
    return w.str();
}

} // namespace skillflow
