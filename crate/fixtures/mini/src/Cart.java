/**
 * A shopping cart: SKU to quantity, insertion-ordered.
 */
public class Cart {
    private java.util.Map quantities = new java.util.LinkedHashMap();

    public void addItem(String sku, int quantity) {
        int current = quantityOf(sku);
        quantities.put(sku, new Integer(current + quantity));
    }

    public void removeItem(String sku) {
        quantities.remove(sku);
    }

    public int quantityOf(String sku) {
        Object quantity = quantities.get(sku);
        if (quantity == null) {
            return 0;
        }
        return ((Integer) quantity).intValue();
    }

    /** Total number of units across all line items. */
    public int totalQuantity() {
        return quantities.size();
    }

    public java.util.Iterator skus() {
        return quantities.keySet().iterator();
    }

    public boolean isEmpty() {
        return quantities.isEmpty();
    }

    public void clear() {
        quantities.clear();
    }
}
