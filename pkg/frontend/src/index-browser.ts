/**
 * Publish index browser model.  An agent's publish index is the
 * machine-readable document served by the manager proxy: sections of
 * `schema <name>` followed by `var` and `notif` lines in the schema
 * file syntax.  The editor builds selections and notification filters
 * from it.
 */

export interface IndexVariable {
    oid: string;
    name: string;
    syntax: string;
    access: "ro" | "rw";
    table: boolean;
    schema: string;
}

export interface IndexNotification {
    name: string;
    payload: string[];
    schema: string;
}

export interface PublishIndex {
    variables: IndexVariable[];
    notifications: IndexNotification[];
}

export function parsePublishIndex(text: string): PublishIndex {
    const index: PublishIndex = { variables: [], notifications: [] };
    let schema = "";
    for (const raw of text.split("\n")) {
        const line = raw.split("#", 1)[0].trim();
        if (line === "") {
            continue;
        }
        const fields = line.split(/\s+/);
        if (fields[0] === "schema") {
            schema = fields[1];
        } else if (fields[0] === "var") {
            index.variables.push({
                oid: fields[1],
                name: fields[2],
                syntax: fields[3],
                access: fields[4] as "ro" | "rw",
                table: fields[5] === "table",
                schema,
            });
        } else if (fields[0] === "notif") {
            index.notifications.push({
                name: fields[1],
                payload: (fields[2] ?? "").split(",").filter((s) => s !== ""),
                schema,
            });
        }
    }
    return index;
}

/** Name lookup for chart titles and the editor's variable picker. */
export function variableByName(index: PublishIndex, name: string): IndexVariable | undefined {
    return index.variables.find((v) => v.name === name);
}
